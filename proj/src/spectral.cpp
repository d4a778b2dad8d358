#include "mbrw/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace mbrw {

using nlohmann::json;

namespace {

struct DenseOp {
  int n = 0;
  std::vector<double> a;  // row-major
  void apply(const double* v, double* out) const {
    for (int i = 0; i < n; ++i) {
      const double* row = a.data() + static_cast<size_t>(i) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += row[j] * v[j];
      out[i] = acc;
    }
  }
  void apply_transpose(const double* v, double* out) const {
    std::fill(out, out + n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double vi = v[i];
      if (vi == 0.0) continue;
      const double* row = a.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) out[j] += row[j] * vi;
    }
  }
};

DenseOp build_Ps_matrix(const ModelSpec& spec, double s, const DirectionGrid& grid, bool dual) {
  spec.validate();
  const int n = grid.size();
  DenseOp op;
  op.n = n;
  op.a.assign(static_cast<size_t>(n) * n, 0.0);
  const double en = spec.offspring.mean();
  std::vector<PosMatrix> atoms;
  for (const auto& [mat, w] : spec.atoms) {
    PosMatrix g = mat.scaled(spec.scale_lambda);
    atoms.push_back(dual ? g.transpose() : g);
  }
  for (int i = 0; i < n; ++i) {
    const Direction& x = grid.node(i);
    for (size_t j = 0; j < atoms.size(); ++j) {
      const double sigma = cocycle(atoms[j], x);
      const Direction y = act(atoms[j], x);
      const double coeff = en * spec.atoms[j].second * std::exp(s * sigma);
      const auto st = grid.locate(y);
      for (int k = 0; k < st.count; ++k) {
        op.a[static_cast<size_t>(i) * n + st.idx[k]] += coeff * st.w[k];
      }
    }
  }
  return op;
}

double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

std::vector<double> apply_Ps(const ModelSpec& spec, double s, std::span<const double> phi,
                             const DirectionGrid& grid, bool dual) {
  if (static_cast<int>(phi.size()) != grid.size()) {
    throw ConfigError("apply_Ps: grid function has wrong length");
  }
  const DenseOp op = build_Ps_matrix(spec, s, grid, dual);
  std::vector<double> out(phi.size());
  op.apply(phi.data(), out.data());
  return out;
}

SpectralData dominant_eigen(const ModelSpec& spec, double s, const DirectionGrid& grid, double tol,
                            bool dual, int max_iter, const std::vector<double>* warm_start) {
  if (!(tol > 0.0)) throw ConfigError("dominant_eigen: tol must be > 0");
  const DenseOp op = build_Ps_matrix(spec, s, grid, dual);
  const int n = op.n;

  std::vector<double> v(n, 1.0), w(n);
  if (warm_start && static_cast<int>(warm_start->size()) == n) v = *warm_start;

  const double target = std::max(tol, 1e-14);
  double m = 0.0, m_prev = -1.0, residual = 1e300, best_residual = 1e300;
  int stalled = 0;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    op.apply(v.data(), w.data());
    m = sup_norm(w);
    if (!(m > 0.0)) throw MathError("dominant_eigen: operator annihilated the cone");
    double res = 0.0;
    for (int i = 0; i < n; ++i) res = std::max(res, std::abs(w[i] - m * v[i]));
    residual = res / m;
    for (int i = 0; i < n; ++i) v[i] = w[i] / m;
    if (std::abs(m - m_prev) < tol * m && residual < target) {
      converged = true;
      break;
    }
    // Accept a rounding-floor plateau once the residual stops improving.
    if (residual < best_residual * (1.0 - 1e-3)) {
      best_residual = residual;
      stalled = 0;
    } else if (++stalled > 100 && residual < 1e3 * target && std::abs(m - m_prev) < tol * m) {
      converged = true;
      break;
    }
    m_prev = m;
  }
  if (!converged) {
    throw MathError("dominant_eigen: no convergence after " + std::to_string(max_iter) +
                    " iterations (residual " + std::to_string(residual) + ")");
  }

  // Adjoint iteration for the eigenmeasure.
  std::vector<double> u(n, 1.0 / n), u2(n);
  for (int jt = 0; jt < max_iter; ++jt) {
    op.apply_transpose(u.data(), u2.data());
    double total = 0.0;
    for (double x : u2) total += x;
    if (!(total > 0.0)) throw MathError("dominant_eigen: adjoint iteration degenerate");
    double diff = 0.0;
    for (int i = 0; i < n; ++i) {
      u2[i] /= total;
      diff = std::max(diff, std::abs(u2[i] - u[i]));
    }
    u.swap(u2);
    if (diff < tol) break;
    if (jt + 1 >= max_iter) {
      throw MathError("dominant_eigen: adjoint iteration did not converge");
    }
  }

  // Bilinear (Rayleigh-type) eigenvalue from the left/right pair: its error
  // is quadratic in the iteration residuals, which keeps finite differences
  // of log m(s) meaningful even when power iteration plateaus at rounding.
  {
    std::vector<double> Pr(n);
    op.apply(v.data(), Pr.data());
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      num += u[i] * Pr[i];
      den += u[i] * v[i];
    }
    if (den > 0.0 && num > 0.0) m = num / den;
    double res = 0.0;
    for (int i = 0; i < n; ++i) res = std::max(res, std::abs(Pr[i] - m * v[i]));
    residual = res / m;
  }

  SpectralData sd;
  sd.s = s;
  sd.m_s = m;
  sd.residual = residual;
  sd.dual = dual;
  sd.grid_size = grid.requested_size();
  sd.model_hash = spec.hash();
  sd.r = std::move(v);
  sd.nu = std::move(u);
  // pi_i proportional to r_i nu_i, normalized to a probability vector.
  sd.pi.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    sd.pi[i] = sd.r[i] * sd.nu[i];
    total += sd.pi[i];
  }
  for (double& x : sd.pi) x /= total;
  return sd;
}

SpectralData dominant_eigen_dual(const ModelSpec& spec, double s, const DirectionGrid& grid,
                                 double tol, std::optional<double> m_primal) {
  const double mp = m_primal ? *m_primal : dominant_eigen(spec, s, grid, tol).m_s;
  SpectralData sd = dominant_eigen(spec, s, grid, tol, /*dual=*/true);
  // The primal and dual discretizations carry independent O(G^-2)
  // interpolation defects, so the coincidence check allows for them on top
  // of the iteration tolerance.
  const double G = static_cast<double>(grid.requested_size());
  const double allowance = 2.0 * std::max(tol, 1e-12) * mp + 10.0 * mp / (G * G) + 1e-13;
  if (std::abs(sd.m_s - mp) > allowance) {
    throw MathError("primal/dual eigenvalue mismatch: primal " + std::to_string(mp) + " vs dual " +
                    std::to_string(sd.m_s));
  }
  return sd;
}

std::pair<double, double> big_M(const ModelSpec& spec, double s, const DirectionGrid& grid,
                                double tol) {
  const double h = kBigMDerivStep;
  const SpectralData mid = dominant_eigen(spec, s, grid, tol);
  const SpectralData up = dominant_eigen(spec, s + h, grid, tol, false, 100000, &mid.r);
  const SpectralData dn = dominant_eigen(spec, s - h, grid, tol, false, 100000, &mid.r);
  const double M = std::log(mid.m_s);
  const double Mp = (std::log(up.m_s) - std::log(dn.m_s)) / (2.0 * h);
  return {M, Mp};
}

namespace {

ModelSpec with_lambda_shift(const ModelSpec& spec, double log_shift) {
  ModelSpec out = spec;
  out.scale_lambda = spec.scale_lambda * std::exp(log_shift);
  return out;
}

}  // namespace

std::pair<ModelSpec, BoundaryData> calibrate_boundary(const ModelSpec& spec, CalibrationMode mode,
                                                      const DirectionGrid& grid,
                                                      double alpha_target, double tol) {
  spec.validate();
  ModelSpec calibrated = spec;
  double alpha = alpha_target;

  if (mode == CalibrationMode::solve_alpha) {
    if (spec.offspring.mean() <= 1.0) {
      throw MathError("calibrated model not supercritical: E[N] = " +
                      std::to_string(spec.offspring.mean()));
    }
    // h(s) = M(s) - s M'(s) is strictly decreasing where M'' > 0; scan
    // log-spaced probes in [0.05, 8] for a sign change, then bisect.
    const double lo = 0.05, hi = 8.0;
    const int probes = 200;
    auto h_of = [&](double s) {
      const auto [M, Mp] = big_M(spec, s, grid, tol);
      return M - s * Mp;
    };
    double s_lo = lo, h_lo = h_of(lo);
    double s_hi = 0.0;
    bool bracketed = false;
    for (int k = 1; k < probes; ++k) {
      const double sk = lo * std::pow(hi / lo, static_cast<double>(k) / (probes - 1));
      const double hk = h_of(sk);
      if (h_lo > 0.0 && hk <= 0.0) {
        s_hi = sk;
        bracketed = true;
        break;
      }
      s_lo = sk;
      h_lo = hk;
    }
    if (!bracketed) {
      throw MathError("no boundary parameter in range [0.05, 8]: h(s) = M(s) - s M'(s) has no sign change");
    }
    for (int it = 0; it < 200 && (s_hi - s_lo) > 1e-13; ++it) {
      const double mid = 0.5 * (s_lo + s_hi);
      const double hm = h_of(mid);
      if (std::abs(hm) < 1e-12) {
        s_lo = s_hi = mid;
        break;
      }
      if (hm > 0.0) {
        s_lo = mid;
      } else {
        s_hi = mid;
      }
    }
    alpha = 0.5 * (s_lo + s_hi);
    const auto [M, Mp] = big_M(spec, alpha, grid, tol);
    calibrated = with_lambda_shift(spec, -Mp);
  } else {
    if (!(alpha_target > 0.0)) throw ConfigError("fix_alpha: alpha_target must be > 0");
    alpha = alpha_target;
    const auto [M, Mp] = big_M(spec, alpha, grid, tol);
    const double log_en = std::log(spec.offspring.mean());
    const double M_nu = M - log_en;       // M computed with E[N] = 1
    const double target_log_en = -(M_nu - alpha * Mp);
    const double en_new = std::exp(target_log_en);
    if (en_new <= 1.0 + 1e-9) {
      throw MathError("calibrated model not supercritical: required E[N] = " +
                      std::to_string(en_new));
    }
    calibrated = with_lambda_shift(spec, -Mp);
    calibrated.offspring = spec.offspring.with_mean(en_new);
  }

  // Verify residuals on the updated model.
  const auto [M_res, Mp_res] = big_M(calibrated, alpha, grid, tol);
  if (std::abs(M_res) > 1e-8 || std::abs(Mp_res) > 1e-6) {
    throw MathError("boundary calibration residuals too large: |M| = " + std::to_string(M_res) +
                    ", |M'| = " + std::to_string(Mp_res));
  }

  BoundaryData bd;
  bd.alpha = alpha;
  bd.scale_lambda = calibrated.scale_lambda;
  bd.offspring_mean = calibrated.offspring.mean();
  bd.M_value = M_res;
  bd.M_prime = Mp_res;
  bd.primal = dominant_eigen(calibrated, alpha, grid, tol);
  bd.dual = dominant_eigen_dual(calibrated, alpha, grid, tol, bd.primal.m_s);
  TiltedKernel kernel(calibrated, grid, bd.primal);
  bd.ell = ell_alpha(kernel);
  bd.sigma2_alpha = sigma2_alpha(kernel);
  return {std::move(calibrated), std::move(bd)};
}

TiltedKernel::TiltedKernel(const ModelSpec& spec, const DirectionGrid& grid, SpectralData sd)
    : grid_(&grid), sd_(std::move(sd)) {
  spec.validate();
  if (static_cast<int>(sd_.r.size()) != grid.size()) {
    throw ConfigError("TiltedKernel: spectral data does not match grid");
  }
  d_ = spec.d;
  natoms_ = spec.atom_count();
  en_ = spec.offspring.mean();
  m_ = sd_.m_s;
  std::vector<PosMatrix> scaled = spec.scaled_atoms();
  if (sd_.dual) {
    for (auto& g : scaled) g = g.transpose();
  }
  for (const auto& g : scaled) {
    mats_.insert(mats_.end(), g.entries().begin(), g.entries().end());
  }
  for (const auto& [mat, w] : spec.atoms) q_.push_back(w);

  const int n = grid.size();
  nw_.resize(static_cast<size_t>(n) * natoms_);
  ncdf_.resize(nw_.size());
  ninc_.resize(nw_.size());
  nsten_.resize(nw_.size());
  for (int i = 0; i < n; ++i) {
    const Direction& x = grid.node(i);
    double total = 0.0;
    for (int j = 0; j < natoms_; ++j) {
      const PosMatrix& g = scaled[j];
      const double sigma = cocycle(g, x);
      const Direction y = act(g, x);
      const double w = en_ * q_[j] * std::exp(sd_.s * sigma) * grid.interp(sd_.r, y) /
                       (m_ * sd_.r[i]);
      nw_[idx(i, j)] = w;
      ninc_[idx(i, j)] = -sigma;
      nsten_[idx(i, j)] = grid.locate(y);
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw MathError("kernel weights at node " + std::to_string(i) + " sum to " +
                      std::to_string(total) + " (invariant violation)");
    }
    double acc = 0.0;
    for (int j = 0; j < natoms_; ++j) {
      nw_[idx(i, j)] /= total;
      acc += nw_[idx(i, j)];
      ncdf_[idx(i, j)] = acc;
    }
    ncdf_[idx(i, natoms_ - 1)] = 1.0;
  }
}

double TiltedKernel::weights_at(const Direction& x, double* w, double* inc, Direction* next) const {
  const double rx = grid_->interp(sd_.r, x);
  double total = 0.0;
  double y[kMaxDim];
  for (int j = 0; j < natoms_; ++j) {
    const double* g = mats_.data() + static_cast<size_t>(j) * d_ * d_;
    const double norm = apply_raw(g, x.data(), y, d_);
    const double sigma = std::log(norm);
    for (int i = 0; i < d_; ++i) y[i] /= norm;
    Direction ydir = direction_unchecked(y, d_);
    const double ry = grid_->interp(sd_.r, ydir);
    w[j] = en_ * q_[j] * std::exp(sd_.s * sigma) * ry / (m_ * rx);
    inc[j] = -sigma;
    if (next) next[j] = ydir;
    total += w[j];
  }
  for (int j = 0; j < natoms_; ++j) w[j] /= total;
  return std::abs(total - 1.0);
}

int TiltedKernel::step_indexed(Direction& x, double& S, Rng& rng) const {
  double w[64], inc[64];
  Direction next[64];
  const double dev = weights_at(x, w, inc, next);
  max_dev_ = std::max(max_dev_, dev);
  double u = rng.uniform01();
  int j = natoms_ - 1;
  double acc = 0.0;
  for (int k = 0; k < natoms_; ++k) {
    acc += w[k];
    if (u < acc) {
      j = k;
      break;
    }
  }
  S += inc[j];
  x = next[j];
  return j;
}

void TiltedKernel::step(Direction& x, double& S, Rng& rng) const { step_indexed(x, S, rng); }

std::vector<double> TiltedKernel::apply(std::span<const double> phi) const {
  return apply_tilted(phi, 0.0);
}

std::vector<double> TiltedKernel::apply_tilted(std::span<const double> phi, double t) const {
  const int n = grid_->size();
  if (static_cast<int>(phi.size()) != n) throw ConfigError("apply_tilted: wrong length");
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < natoms_; ++j) {
      const auto& st = nsten_[idx(i, j)];
      double val = 0.0;
      for (int k = 0; k < st.count; ++k) val += st.w[k] * phi[st.idx[k]];
      const double factor = (t == 0.0) ? 1.0 : std::exp(-t * ninc_[idx(i, j)]);
      acc += nw_[idx(i, j)] * factor * val;
    }
    out[i] = acc;
  }
  return out;
}

std::vector<double> TiltedKernel::apply_transpose(std::span<const double> mu) const {
  const int n = grid_->size();
  if (static_cast<int>(mu.size()) != n) throw ConfigError("apply_transpose: wrong length");
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double mi = mu[i];
    if (mi == 0.0) continue;
    for (int j = 0; j < natoms_; ++j) {
      const auto& st = nsten_[idx(i, j)];
      const double w = nw_[idx(i, j)] * mi;
      for (int k = 0; k < st.count; ++k) out[st.idx[k]] += w * st.w[k];
    }
  }
  return out;
}

std::vector<double> TiltedKernel::invariant_measure() const {
  std::vector<double> pi = sd_.pi;
  for (int it = 0; it < 100000; ++it) {
    std::vector<double> next = apply_transpose(pi);
    double total = 0.0;
    for (double v : next) total += v;
    double diff = 0.0;
    for (size_t i = 0; i < next.size(); ++i) {
      next[i] /= total;
      diff = std::max(diff, std::abs(next[i] - pi[i]));
    }
    pi.swap(next);
    if (diff < 1e-16) return pi;
  }
  return pi;  // fixed point to rounding accuracy
}

std::vector<double> ell_alpha(const TiltedKernel& kernel, double tol) {
  const int n = kernel.grid().size();
  const int na = kernel.atom_count();
  std::vector<double> psi(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < na; ++j) psi[i] += kernel.node_weight(i, j) * kernel.node_increment(i, j);
  }
  const std::vector<double> pi = kernel.invariant_measure();
  auto pi_mean = [&](const std::vector<double>& f) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += pi[i] * f[i];
    return acc;
  };
  const double drift = pi_mean(psi);
  if (std::abs(drift) > 1e-6) {
    throw MathError("model not at boundary: pi(psi) = " + std::to_string(drift));
  }
  // Center psi by the stationary mean of the discretized kernel, and keep
  // re-centering each term: without this the residual drift accumulates
  // linearly across the series.
  std::vector<double> term(n);
  for (int i = 0; i < n; ++i) term[i] = psi[i] - drift;
  std::vector<double> ell = term;
  const int max_terms = 100000;
  int k = 0;
  for (; k < max_terms; ++k) {
    term = kernel.apply(term);
    const double c = pi_mean(term);
    double sup = 0.0;
    for (int i = 0; i < n; ++i) {
      term[i] -= c;
      ell[i] += term[i];
      sup = std::max(sup, std::abs(term[i]));
    }
    if (sup < std::max(tol, 1e-15)) break;
  }
  if (k >= max_terms) throw MathError("ell_alpha: Neumann series did not converge");
  return ell;
}

double sigma2_alpha(const TiltedKernel& kernel, double tol) {
  const int n = kernel.grid().size();
  const double h = kSigmaDerivStep;
  auto lambda_of = [&](double t) {
    std::vector<double> v(n, 1.0), w;
    double m = 0.0, m_prev = -1.0;
    for (int it = 0; it < 100000; ++it) {
      w = kernel.apply_tilted(v, t);
      m = 0.0;
      for (double x : w) m = std::max(m, std::abs(x));
      for (int i = 0; i < n; ++i) v[i] = w[i] / m;
      if (std::abs(m - m_prev) < std::max(tol, 1e-15) * m) return std::log(m);
      m_prev = m;
    }
    throw MathError("sigma2_alpha: tilted eigenvalue iteration did not converge");
  };
  const double lp = lambda_of(h);
  const double l0 = lambda_of(0.0);
  const double lm = lambda_of(-h);
  const double first = (lp - lm) / (2.0 * h);
  if (std::abs(first) > 1e-5) {
    throw MathError("sigma2_alpha: Lambda'(0) = " + std::to_string(first) +
                    " (model not centered)");
  }
  const double sigma2 = (lp - 2.0 * l0 + lm) / (h * h);
  if (sigma2 <= 1e-10) {
    throw MathError("arithmetic/degenerate model: sigma^2 = " + std::to_string(sigma2));
  }
  return sigma2;
}

namespace {

json spectral_to_json(const SpectralData& sd) {
  return json{{"s", sd.s},       {"m_s", sd.m_s},
              {"residual", sd.residual}, {"dual", sd.dual},
              {"grid_size", sd.grid_size}, {"model_hash", sd.model_hash},
              {"r", sd.r},       {"nu", sd.nu},
              {"pi", sd.pi}};
}

SpectralData spectral_from_json(const json& j) {
  SpectralData sd;
  sd.s = j.at("s").get<double>();
  sd.m_s = j.at("m_s").get<double>();
  sd.residual = j.at("residual").get<double>();
  sd.dual = j.at("dual").get<bool>();
  sd.grid_size = j.at("grid_size").get<int>();
  sd.model_hash = j.at("model_hash").get<uint64_t>();
  sd.r = j.at("r").get<std::vector<double>>();
  sd.nu = j.at("nu").get<std::vector<double>>();
  sd.pi = j.at("pi").get<std::vector<double>>();
  return sd;
}

}  // namespace

std::string SpectralData::to_json() const { return spectral_to_json(*this).dump(); }

SpectralData SpectralData::from_json_text(const std::string& text) {
  try {
    return spectral_from_json(json::parse(text));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("spectral JSON: ") + e.what());
  }
}

std::string BoundaryData::to_json() const {
  json j{{"alpha", alpha},
         {"scale_lambda", scale_lambda},
         {"offspring_mean", offspring_mean},
         {"M_value", M_value},
         {"M_prime", M_prime},
         {"sigma2_alpha", sigma2_alpha},
         {"ell", ell},
         {"primal", spectral_to_json(primal)},
         {"dual", spectral_to_json(dual)}};
  return j.dump();
}

BoundaryData BoundaryData::from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    BoundaryData bd;
    bd.alpha = j.at("alpha").get<double>();
    bd.scale_lambda = j.at("scale_lambda").get<double>();
    bd.offspring_mean = j.at("offspring_mean").get<double>();
    bd.M_value = j.at("M_value").get<double>();
    bd.M_prime = j.at("M_prime").get<double>();
    bd.sigma2_alpha = j.at("sigma2_alpha").get<double>();
    bd.ell = j.at("ell").get<std::vector<double>>();
    bd.primal = spectral_from_json(j.at("primal"));
    bd.dual = spectral_from_json(j.at("dual"));
    return bd;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("boundary JSON: ") + e.what());
  }
}

}  // namespace mbrw
