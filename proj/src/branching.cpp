#include "mbrw/branching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbrw {

std::vector<uint32_t> label_of(const std::vector<GenerationSnapshot>& retained, int gen,
                               size_t idx) {
  std::vector<uint32_t> label;
  for (int g = gen; g > 0; --g) {
    const auto& p = retained.at(g).particles.at(idx);
    label.push_back(p.child_index);
    idx = p.parent;
  }
  std::reverse(label.begin(), label.end());
  return label;
}

TreeSimulator::TreeSimulator(const ModelSpec& spec, const Direction& x0, double b0,
                             SimOptions opts, Rng rng)
    : spec_(spec), opts_(opts), rng_(rng) {
  spec_.validate();
  d_ = spec_.d;
  natoms_ = spec_.atom_count();
  for (const auto& g : spec_.scaled_atoms()) {
    mats_.insert(mats_.end(), g.entries().begin(), g.entries().end());
  }
  double acc = 0.0;
  for (const auto& [mat, w] : spec_.atoms) {
    acc += w;
    atom_cdf_.push_back(acc);
  }
  atom_cdf_.back() = 1.0;

  ParticleRecord root;
  root.X = x0;
  root.S = b0;
  root.min_S_prefix = b0;
  root.min_S_from_k = (opts_.min_from_k == 0) ? b0 : std::numeric_limits<double>::infinity();
  cur_.n = 0;
  cur_.particles.push_back(root);
  cur_.survived = true;
}

bool TreeSimulator::step() {
  next_.particles.clear();
  next_.n = cur_.n + 1;
  const int child_gen = next_.n;
  double y[kMaxDim];
  for (uint32_t pi = 0; pi < cur_.particles.size(); ++pi) {
    const ParticleRecord& parent = cur_.particles[pi];
    const int n_children = spec_.offspring.sample(rng_);
    for (int c = 0; c < n_children; ++c) {
      const int j = rng_.discrete_cdf(atom_cdf_.data(), natoms_);
      const double* g = mats_.data() + static_cast<size_t>(j) * d_ * d_;
      const double norm = apply_raw(g, parent.X.data(), y, d_);
      ParticleRecord child;
      for (int i = 0; i < d_; ++i) y[i] /= norm;
      child.X = direction_unchecked(y, d_);
      child.S = parent.S - std::log(norm);
      child.min_S_prefix = std::min(parent.min_S_prefix, child.S);
      if (opts_.min_from_k >= 0) {
        child.min_S_from_k = (child_gen < opts_.min_from_k)
                                 ? std::numeric_limits<double>::infinity()
                                 : std::min(parent.min_S_from_k, child.S);
      }
      child.parent = pi;
      child.child_index = static_cast<uint32_t>(c);
      if (child.min_S_prefix < opts_.kill_below) continue;
      if (opts_.prune_epsilon > 0.0) {
        const double weight =
            std::exp(-opts_.prune_alpha * child.S) * (1.0 + std::max(child.S, 0.0));
        if (weight < opts_.prune_epsilon) {
          prune_bias_ += opts_.prune_epsilon;
          continue;
        }
      }
      next_.particles.push_back(child);
      if (next_.particles.size() > opts_.particle_cap) {
        throw MathError("population cap exceeded at generation " + std::to_string(child_gen) +
                        ": more than " + std::to_string(opts_.particle_cap) + " particles");
      }
    }
  }
  next_.survived = !next_.particles.empty();
  std::swap(cur_, next_);
  return cur_.survived;
}

double additive_martingale(const GenerationSnapshot& snap, const SpectralData& sd,
                           const DirectionGrid& grid) {
  double acc = 0.0;
  for (const auto& p : snap.particles) {
    acc += std::exp(-sd.s * p.S) * grid.interp(sd.r, p.X);
  }
  return acc * std::pow(sd.m_s, -snap.n);
}

double derivative_martingale(const GenerationSnapshot& snap, const BoundaryData& bd,
                             const DirectionGrid& grid) {
  double acc = 0.0;
  const double alpha = bd.alpha;
  for (const auto& p : snap.particles) {
    const double ell = grid.interp(bd.ell, p.X);
    acc += (p.S + ell) * std::exp(-alpha * p.S) * grid.interp(bd.primal.r, p.X);
  }
  return acc;
}

TruncatedPair truncated_martingales(const GenerationSnapshot& snap, const SpectralData& sd_alpha,
                                    const DirectionGrid& grid, int k) {
  TruncatedPair out;
  const double inv_mn = std::pow(sd_alpha.m_s, -snap.n);
  for (const auto& p : snap.particles) {
    const double term = std::exp(-sd_alpha.s * p.S) * grid.interp(sd_alpha.r, p.X) * inv_mn;
    if (p.min_S_prefix >= 0.0) out.w_tilde += term;
    if (k == 0) {
      if (p.min_S_prefix >= 0.0) out.w_tilde_tilde += term;
    } else {
      // min over ancestors of generation >= k; empty min counts as passed.
      if (snap.n < k || p.min_S_from_k >= 0.0) out.w_tilde_tilde += term;
    }
  }
  return out;
}

double h_martingale(const GenerationSnapshot& snap, const HarmonicEvaluator& ev,
                    const SpectralData& sd_alpha, const DirectionGrid& grid) {
  double acc = 0.0;
  for (const auto& p : snap.particles) {
    if (p.min_S_prefix < ev.B_lower) continue;
    acc += ev.H(p.X, p.S, sd_alpha, grid);
  }
  return acc;
}

namespace {

// Lean d = 2 fold engine: structure-of-arrays particle state with the
// direction reduced to its first coordinate. Consumes the rng in exactly the
// same order as TreeSimulator, so both engines produce identical series for
// a given seed (checked in the tests).
MartingaleSeries run_series_d2(const ModelSpec& spec, const Direction& x0, double b0,
                               const SeriesRequest& req,
                               const std::vector<const SpectralData*>& sd_per_s,
                               const BoundaryData* bd, const DirectionGrid& grid,
                               const SimOptions& opts, Rng rng) {
  MartingaleSeries out;
  out.W.resize(req.s_values.size());

  const int G = grid.requested_size();
  auto interp = [G](const std::vector<double>& f, double t) {
    const double pos = t * G - 0.5;
    if (pos <= 0.0) return f.front();
    if (pos >= G - 1) return f.back();
    const int i = static_cast<int>(pos);
    const double frac = pos - i;
    return f[i] * (1.0 - frac) + f[i + 1] * frac;
  };

  // Per-atom affine forms: ||g x_t|| = nb + ng t, (g x_t)_0 = yb + yg t.
  const int na = spec.atom_count();
  std::vector<double> nb(na), ng(na), yb(na), yg(na), atom_cdf(na);
  {
    const auto scaled = spec.scaled_atoms();
    double acc = 0.0;
    for (int j = 0; j < na; ++j) {
      const PosMatrix& g = scaled[j];
      const double c0 = g(0, 0) + g(1, 0), c1 = g(0, 1) + g(1, 1);
      nb[j] = c1;
      ng[j] = c0 - c1;
      yb[j] = g(0, 1);
      yg[j] = g(0, 0) - g(0, 1);
      acc += spec.atoms[j].second;
      atom_cdf[j] = acc;
    }
    atom_cdf[na - 1] = 1.0;
  }

  const auto kind = spec.offspring.kind();
  const int det_n = (kind == OffspringLaw::Kind::deterministic)
                        ? static_cast<int>(spec.offspring.mean() + 0.5)
                        : 0;
  std::vector<int> off_counts;
  std::vector<double> off_cdf;
  if (kind == OffspringLaw::Kind::finite_support) {
    double acc = 0.0;
    for (const auto& [n, p] : spec.offspring.pmf()) {
      off_counts.push_back(n);
      acc += p;
      off_cdf.push_back(acc);
    }
    off_cdf.back() = 1.0;
  }
  const double poisson_mean = spec.offspring.mean();

  const bool track_k = opts.min_from_k >= 0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> t_cur{x0[0]}, S_cur{b0}, mp_cur{b0}, mk_cur, t_nxt, S_nxt, mp_nxt, mk_nxt;
  if (track_k) mk_cur.push_back(opts.min_from_k == 0 ? b0 : inf);

  size_t next_record = 0;
  const int max_gen = req.record_at.empty() ? 0 : req.record_at.back();
  const double alpha = bd ? bd->alpha : 0.0;

  auto record_now = [&](int gen) {
    out.generations.push_back(gen);
    out.population.push_back(t_cur.size());
    for (size_t si = 0; si < req.s_values.size(); ++si) {
      const SpectralData& sd = *sd_per_s[si];
      double acc = 0.0;
      for (size_t i = 0; i < t_cur.size(); ++i) {
        acc += std::exp(-sd.s * S_cur[i]) * interp(sd.r, t_cur[i]);
      }
      out.W[si].push_back(acc * std::pow(sd.m_s, -gen));
    }
    if (req.want_D) {
      double acc = 0.0;
      for (size_t i = 0; i < t_cur.size(); ++i) {
        acc += (S_cur[i] + interp(bd->ell, t_cur[i])) * std::exp(-alpha * S_cur[i]) *
               interp(bd->primal.r, t_cur[i]);
      }
      out.D.push_back(acc);
    }
    if (req.want_W_tilde || req.w_tilde_tilde_k >= 0) {
      const double inv_mn = std::pow(bd->primal.m_s, -gen);
      double wt = 0.0, wtt = 0.0;
      const int k = std::max(req.w_tilde_tilde_k, 0);
      for (size_t i = 0; i < t_cur.size(); ++i) {
        const double term =
            std::exp(-alpha * S_cur[i]) * interp(bd->primal.r, t_cur[i]) * inv_mn;
        if (mp_cur[i] >= 0.0) wt += term;
        if (k == 0) {
          if (mp_cur[i] >= 0.0) wtt += term;
        } else if (gen < k || mk_cur[i] >= 0.0) {
          wtt += term;
        }
      }
      if (req.want_W_tilde) out.W_tilde.push_back(wt);
      if (req.w_tilde_tilde_k >= 0) out.W_tilde_tilde.push_back(wtt);
    }
    if (req.evaluator) {
      double acc = 0.0;
      for (size_t i = 0; i < t_cur.size(); ++i) {
        if (mp_cur[i] < req.evaluator->B_lower) continue;
        const double c[2] = {t_cur[i], 1.0 - t_cur[i]};
        acc += interp(bd->primal.r, t_cur[i]) * req.evaluator->h(direction_unchecked(c, 2), S_cur[i]) *
               std::exp(-alpha * S_cur[i]);
      }
      out.M_h.push_back(acc);
    }
  };

  for (int gen = 0; gen <= max_gen; ++gen) {
    if (gen > 0) {
      const size_t width = t_cur.size();
      t_nxt.clear();
      S_nxt.clear();
      mp_nxt.clear();
      mk_nxt.clear();
      const size_t hint = static_cast<size_t>(width * poisson_mean * 1.2) + 16;
      t_nxt.reserve(hint);
      S_nxt.reserve(hint);
      mp_nxt.reserve(hint);
      if (track_k) mk_nxt.reserve(hint);
      for (size_t i = 0; i < width; ++i) {
        int kids;
        switch (kind) {
          case OffspringLaw::Kind::deterministic: kids = det_n; break;
          case OffspringLaw::Kind::finite_support:
            kids = off_counts[rng.discrete_cdf(off_cdf.data(), static_cast<int>(off_cdf.size()))];
            break;
          default: kids = rng.poisson(poisson_mean); break;
        }
        const double t = t_cur[i], S = S_cur[i], mp = mp_cur[i];
        const double mk = track_k ? mk_cur[i] : 0.0;
        for (int c = 0; c < kids; ++c) {
          const double u = rng.uniform01();
          int j = na - 1;
          for (int a = 0; a < na; ++a) {
            if (u < atom_cdf[a]) {
              j = a;
              break;
            }
          }
          const double norm = nb[j] + ng[j] * t;
          const double tn = (yb[j] + yg[j] * t) / norm;
          const double Sn = S - std::log(norm);
          const double mpn = std::min(mp, Sn);
          if (mpn < opts.kill_below) continue;
          t_nxt.push_back(tn);
          S_nxt.push_back(Sn);
          mp_nxt.push_back(mpn);
          if (track_k) {
            mk_nxt.push_back(gen < opts.min_from_k ? inf : std::min(mk, Sn));
          }
          if (t_nxt.size() > opts.particle_cap) {
            throw MathError("population cap exceeded at generation " + std::to_string(gen) +
                            ": more than " + std::to_string(opts.particle_cap) + " particles");
          }
        }
      }
      t_cur.swap(t_nxt);
      S_cur.swap(S_nxt);
      mp_cur.swap(mp_nxt);
      if (track_k) mk_cur.swap(mk_nxt);
      if (t_cur.empty()) {
        while (next_record < req.record_at.size()) {
          const int n = req.record_at[next_record++];
          out.generations.push_back(n);
          out.population.push_back(0);
          for (auto& w : out.W) w.push_back(0.0);
          if (req.want_D) out.D.push_back(0.0);
          if (req.want_W_tilde) out.W_tilde.push_back(0.0);
          if (req.w_tilde_tilde_k >= 0) out.W_tilde_tilde.push_back(0.0);
          if (req.evaluator) out.M_h.push_back(0.0);
        }
        out.survived_to_end = false;
        return out;
      }
    }
    if (next_record < req.record_at.size() && req.record_at[next_record] == gen) {
      ++next_record;
      record_now(gen);
    }
  }
  out.survived_to_end = !t_cur.empty();
  return out;
}

}  // namespace

MartingaleSeries run_martingale_series(const ModelSpec& spec, const Direction& x0, double b0,
                                       const SeriesRequest& req,
                                       const std::vector<const SpectralData*>& sd_per_s,
                                       const BoundaryData* bd, const DirectionGrid& grid,
                                       SimOptions opts, Rng rng) {
  if (req.s_values.size() != sd_per_s.size()) {
    throw ConfigError("run_martingale_series: s_values and eigen-data length mismatch");
  }
  if ((req.want_D || req.want_W_tilde || req.w_tilde_tilde_k >= 0 || req.evaluator) && !bd) {
    throw ConfigError("run_martingale_series: boundary data required");
  }
  if (req.w_tilde_tilde_k > 0 && opts.min_from_k != req.w_tilde_tilde_k) {
    opts.min_from_k = req.w_tilde_tilde_k;
  }
  if (spec.d == 2 && opts.prune_epsilon == 0.0 && grid.dim() == 2) {
    return run_series_d2(spec, x0, b0, req, sd_per_s, bd, grid, opts, rng);
  }
  MartingaleSeries out;
  out.W.resize(req.s_values.size());
  TreeSimulator sim(spec, x0, b0, opts, rng);
  size_t next_record = 0;
  const int max_gen = req.record_at.empty() ? 0 : req.record_at.back();
  for (int gen = 0; gen <= max_gen; ++gen) {
    if (gen > 0 && !sim.step()) {
      // Extinct: remaining recorded values are zero sums over empty sets.
      while (next_record < req.record_at.size()) {
        const int n = req.record_at[next_record++];
        out.generations.push_back(n);
        out.population.push_back(0);
        for (auto& w : out.W) w.push_back(0.0);
        if (req.want_D) out.D.push_back(0.0);
        if (req.want_W_tilde) out.W_tilde.push_back(0.0);
        if (req.w_tilde_tilde_k >= 0) out.W_tilde_tilde.push_back(0.0);
        if (req.evaluator) out.M_h.push_back(0.0);
      }
      out.survived_to_end = false;
      return out;
    }
    if (next_record < req.record_at.size() && req.record_at[next_record] == gen) {
      ++next_record;
      const GenerationSnapshot& snap = sim.current();
      out.generations.push_back(gen);
      out.population.push_back(snap.particles.size());
      for (size_t si = 0; si < req.s_values.size(); ++si) {
        out.W[si].push_back(additive_martingale(snap, *sd_per_s[si], grid));
      }
      if (req.want_D) out.D.push_back(derivative_martingale(snap, *bd, grid));
      if (req.want_W_tilde || req.w_tilde_tilde_k >= 0) {
        const auto tp = truncated_martingales(snap, bd->primal, grid,
                                              std::max(req.w_tilde_tilde_k, 0));
        if (req.want_W_tilde) out.W_tilde.push_back(tp.w_tilde);
        if (req.w_tilde_tilde_k >= 0) out.W_tilde_tilde.push_back(tp.w_tilde_tilde);
      }
      if (req.evaluator) {
        out.M_h.push_back(h_martingale(snap, *req.evaluator, bd->primal, grid));
      }
    }
  }
  out.survived_to_end = sim.survived();
  return out;
}

}  // namespace mbrw
