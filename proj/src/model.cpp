#include "mbrw/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mbrw {

using nlohmann::json;

OffspringLaw OffspringLaw::deterministic(int n) {
  if (n < 0) throw ConfigError("offspring.n: count must be >= 0");
  OffspringLaw law;
  law.kind_ = Kind::deterministic;
  law.det_n_ = n;
  law.mean_ = n;
  return law;
}

OffspringLaw OffspringLaw::finite_support(std::vector<std::pair<int, double>> pmf) {
  if (pmf.empty()) throw ConfigError("offspring.atoms: empty support");
  std::sort(pmf.begin(), pmf.end());
  double total = 0.0, mean = 0.0;
  for (auto& [n, p] : pmf) {
    if (n < 0) throw ConfigError("offspring.atoms: count must be >= 0");
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("offspring.atoms: bad probability");
    total += p;
    mean += n * p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("offspring.atoms: probabilities sum to " + std::to_string(total));
  }
  OffspringLaw law;
  law.kind_ = Kind::finite_support;
  law.support_ = std::move(pmf);
  law.mean_ = mean / total;
  double acc = 0.0;
  for (auto& [n, p] : law.support_) {
    acc += p / total;
    law.cdf_.push_back(acc);
  }
  law.cdf_.back() = 1.0;
  return law;
}

OffspringLaw OffspringLaw::poisson(double mean) {
  if (!(mean > 0.0) || !std::isfinite(mean)) throw ConfigError("offspring.mean: must be > 0");
  OffspringLaw law;
  law.kind_ = Kind::poisson;
  law.poisson_mean_ = mean;
  law.mean_ = mean;
  return law;
}

int OffspringLaw::sample(Rng& rng, int cap) const {
  switch (kind_) {
    case Kind::deterministic:
      return det_n_;
    case Kind::finite_support:
      return support_[rng.discrete_cdf(cdf_.data(), static_cast<int>(cdf_.size()))].first;
    case Kind::poisson:
      return rng.poisson(poisson_mean_, cap);
  }
  throw MathError("unreachable");
}

std::vector<std::pair<int, double>> OffspringLaw::pmf() const {
  switch (kind_) {
    case Kind::deterministic:
      return {{det_n_, 1.0}};
    case Kind::finite_support:
      return support_;
    case Kind::poisson: {
      std::vector<std::pair<int, double>> out;
      double p = std::exp(-poisson_mean_);
      double tail = 1.0;
      for (int k = 0; k < 1'000'000; ++k) {
        out.emplace_back(k, p);
        tail -= p;
        if (tail < 1e-15 && k > poisson_mean_) break;
        p *= poisson_mean_ / (k + 1);
      }
      return out;
    }
  }
  throw MathError("unreachable");
}

OffspringLaw OffspringLaw::with_mean(double target) const {
  if (!(target > 0.0)) throw ConfigError("offspring mean target must be > 0");
  switch (kind_) {
    case Kind::deterministic:
      if (std::abs(target - det_n_) > 1e-9) {
        throw MathError("cannot retarget a deterministic offspring law to mean " +
                        std::to_string(target));
      }
      return *this;
    case Kind::poisson:
      return poisson(target);
    case Kind::finite_support: {
      const int lo = support_.front().first;
      const int hi = support_.back().first;
      if (target <= lo || target >= hi) {
        if (std::abs(target - mean_) < 1e-12) return *this;
        throw MathError("tilt target mean " + std::to_string(target) +
                        " outside the open support range (" + std::to_string(lo) + ", " +
                        std::to_string(hi) + ")");
      }
      // q_n ~ p_n theta^n; the tilted mean is increasing in theta.
      double lo_t = 1e-12, hi_t = 1e12;
      auto tilted_mean = [&](double theta) {
        double num = 0.0, den = 0.0;
        for (auto& [n, p] : support_) {
          const double w = p * std::pow(theta, n);
          num += n * w;
          den += w;
        }
        return num / den;
      };
      for (int it = 0; it < 500; ++it) {
        const double mid = std::sqrt(lo_t * hi_t);
        (tilted_mean(mid) < target ? lo_t : hi_t) = mid;
      }
      const double theta = std::sqrt(lo_t * hi_t);
      std::vector<std::pair<int, double>> out;
      double total = 0.0;
      for (auto& [n, p] : support_) total += p * std::pow(theta, n);
      for (auto& [n, p] : support_) out.emplace_back(n, p * std::pow(theta, n) / total);
      return finite_support(std::move(out));
    }
  }
  throw MathError("unreachable");
}

std::string OffspringLaw::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::deterministic:
      os << "deterministic(" << det_n_ << ")";
      break;
    case Kind::poisson:
      os << "poisson(" << poisson_mean_ << ")";
      break;
    case Kind::finite_support: {
      os << "finite{";
      for (size_t i = 0; i < support_.size(); ++i) {
        if (i) os << ", ";
        os << support_[i].first << ":" << support_[i].second;
      }
      os << "}";
      break;
    }
  }
  return os.str();
}

void ModelSpec::validate() const {
  if (d < 2 || d > kMaxDim) throw ConfigError("d: must be in [2, 8]");
  if (atoms.empty()) throw ConfigError("atoms: at least one atom required");
  if (!(scale_lambda > 0.0) || !std::isfinite(scale_lambda)) {
    throw ConfigError("scale_lambda: must be positive and finite");
  }
  double total = 0.0;
  for (size_t j = 0; j < atoms.size(); ++j) {
    const auto& [mat, w] = atoms[j];
    if (mat.dim() != d) throw ConfigError("atoms[" + std::to_string(j) + "].matrix: wrong dimension");
    if (!mat.strictly_positive()) {
      throw ConfigError("atoms[" + std::to_string(j) +
                        "].matrix: condition A1* requires strictly positive entries");
    }
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("atoms[" + std::to_string(j) + "].weight: bad value");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("atoms: weights sum to " + std::to_string(total) + ", expected 1");
  }
}

std::vector<PosMatrix> ModelSpec::scaled_atoms() const {
  std::vector<PosMatrix> out;
  out.reserve(atoms.size());
  for (const auto& [mat, w] : atoms) out.push_back(mat.scaled(scale_lambda));
  return out;
}

std::vector<PosMatrix> ModelSpec::raw_atoms() const {
  std::vector<PosMatrix> out;
  out.reserve(atoms.size());
  for (const auto& [mat, w] : atoms) out.push_back(mat);
  return out;
}

namespace {

json offspring_to_json(const OffspringLaw& law) {
  json j;
  switch (law.kind()) {
    case OffspringLaw::Kind::deterministic:
      j["kind"] = "deterministic";
      j["n"] = law.pmf().front().first;
      break;
    case OffspringLaw::Kind::poisson:
      j["kind"] = "poisson";
      j["mean"] = law.mean();
      break;
    case OffspringLaw::Kind::finite_support: {
      j["kind"] = "finite_support";
      json arr = json::array();
      for (auto& [n, p] : law.pmf()) arr.push_back(json::array({n, p}));
      j["atoms"] = arr;
      break;
    }
  }
  return j;
}

OffspringLaw offspring_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("offspring: missing kind");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "deterministic") return OffspringLaw::deterministic(j.at("n").get<int>());
  if (kind == "poisson") return OffspringLaw::poisson(j.at("mean").get<double>());
  if (kind == "finite_support") {
    std::vector<std::pair<int, double>> pmf;
    for (const auto& e : j.at("atoms")) pmf.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
    return OffspringLaw::finite_support(std::move(pmf));
  }
  throw ConfigError("offspring.kind: unknown kind '" + kind + "'");
}

}  // namespace

std::string ModelSpec::to_json() const {
  json j;
  j["d"] = d;
  j["offspring"] = offspring_to_json(offspring);
  json arr = json::array();
  for (const auto& [mat, w] : atoms) {
    json m = json::array();
    for (int i = 0; i < d; ++i) {
      json row = json::array();
      for (int k = 0; k < d; ++k) row.push_back(mat(i, k));
      m.push_back(row);
    }
    arr.push_back(json{{"matrix", m}, {"weight", w}});
  }
  j["atoms"] = arr;
  j["scale_lambda"] = scale_lambda;
  j["label"] = label;
  return j.dump(2);
}

ModelSpec ModelSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model JSON parse error: ") + e.what());
  }
  ModelSpec spec;
  try {
    spec.d = j.at("d").get<int>();
    spec.offspring = offspring_from_json(j.at("offspring"));
    for (size_t idx = 0; idx < j.at("atoms").size(); ++idx) {
      const auto& e = j.at("atoms")[idx];
      std::vector<double> entries;
      const auto& m = e.at("matrix");
      if (static_cast<int>(m.size()) != spec.d) {
        throw ConfigError("atoms[" + std::to_string(idx) + "].matrix: expected " +
                          std::to_string(spec.d) + " rows");
      }
      for (const auto& row : m) {
        if (static_cast<int>(row.size()) != spec.d) {
          throw ConfigError("atoms[" + std::to_string(idx) + "].matrix: ragged row");
        }
        for (const auto& v : row) entries.push_back(v.get<double>());
      }
      spec.atoms.emplace_back(PosMatrix(spec.d, std::move(entries)), e.at("weight").get<double>());
    }
    spec.scale_lambda = j.value("scale_lambda", 1.0);
    spec.label = j.value("label", std::string{});
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

void ModelSpec::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file: " + path);
  out << to_json() << "\n";
}

uint64_t ModelSpec::hash() const {
  const std::string text = to_json();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

IntensityMeasure intensity(const ModelSpec& spec) {
  spec.validate();
  IntensityMeasure mu;
  const double en = spec.offspring.mean();
  for (const auto& [mat, w] : spec.atoms) {
    mu.atoms.emplace_back(mat.scaled(spec.scale_lambda), en * w);
  }
  mu.total_mass = en;
  return mu;
}

std::vector<PosMatrix> sample_generation(const ModelSpec& spec, Rng& rng) {
  std::vector<int> idx;
  sample_generation_indices(spec, rng, idx);
  const auto scaled = spec.scaled_atoms();
  std::vector<PosMatrix> out;
  out.reserve(idx.size());
  for (int j : idx) out.push_back(scaled[j]);
  return out;
}

void sample_generation_indices(const ModelSpec& spec, Rng& rng, std::vector<int>& out) {
  out.clear();
  const int n = spec.offspring.sample(rng);
  if (n == 0) return;
  // Atom weight cdf; small atom counts, so rebuild cost is negligible here.
  double cdf[64];
  const int na = spec.atom_count();
  double acc = 0.0;
  for (int j = 0; j < na; ++j) {
    acc += spec.atoms[j].second;
    cdf[j] = acc;
  }
  cdf[na - 1] = 1.0;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(rng.discrete_cdf(cdf, na));
}

double perron_root(const PosMatrix& g) {
  const int d = g.dim();
  if (!g.strictly_positive()) throw MathError("perron_root needs a strictly positive matrix");
  if (d == 2) {
    const double tr = g(0, 0) + g(1, 1);
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    return 0.5 * (tr + std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
  }
  std::vector<double> v(d, 1.0 / d), w(d);
  double lambda = 0.0;
  for (int it = 0; it < 100000; ++it) {
    double norm = 0.0;
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += g(i, j) * v[j];
      w[i] = acc;
      norm += acc;
    }
    for (int i = 0; i < d; ++i) w[i] /= norm;
    double diff = 0.0;
    for (int i = 0; i < d; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
    v = w;
    if (diff < 1e-15) {
      lambda = norm;
      break;
    }
    lambda = norm;
  }
  return lambda;
}

const ConditionCheck* ConditionReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::string ConditionReport::to_json() const {
  json j = json::array();
  auto status_str = [](ConditionStatus s) {
    switch (s) {
      case ConditionStatus::holds: return "holds";
      case ConditionStatus::fails: return "fails";
      case ConditionStatus::heuristic_pass: return "heuristic-pass";
      case ConditionStatus::heuristic_fail: return "heuristic-fail";
      case ConditionStatus::not_checked: return "not-checked";
    }
    return "?";
  };
  for (const auto& c : checks) {
    j.push_back(json{{"name", c.name}, {"status", status_str(c.status)}, {"detail", c.detail}});
  }
  return j.dump(2);
}

namespace {

// Real gcd by Euclid descending far below the decision tolerance, followed by
// a near-multiple verification: irrational generator ratios drive the
// remainders towards zero, rational ones stabilize at the true gcd.
double lattice_span(const std::vector<double>& values, double tol) {
  const double descent = tol * 1e-3;
  double g = 0.0;
  for (double v0 : values) {
    double v = std::abs(v0);
    while (v > descent) {
      const double r = std::fmod(g, v);
      g = v;
      v = r;
    }
    if (g == 0.0) g = v;
  }
  if (g <= tol) return 0.0;  // dense
  for (double v : values) {
    const double k = std::round(v / g);
    if (std::abs(v - k * g) > tol) return 0.0;  // not a common lattice after all
  }
  return g;
}

}  // namespace

ConditionReport check_conditions(const ModelSpec& spec,
                                 std::optional<std::pair<double, double>> a3_residuals) {
  spec.validate();
  ConditionReport report;

  // A1*: strict positivity with a finite kappa.
  {
    ConditionCheck c{"A1*", ConditionStatus::holds, ""};
    bool positive = true;
    for (const auto& [mat, w] : spec.atoms) positive = positive && mat.strictly_positive();
    if (positive) {
      const auto fk = fk_constants(spec.raw_atoms(), spec.d);
      c.detail = "kappa=" + std::to_string(fk.kappa);
    } else {
      c.status = ConditionStatus::fails;
      c.detail = "an atom has a zero entry";
    }
    report.checks.push_back(std::move(c));
  }

  // A2 heuristic: Perron roots of all products of atoms up to length 3 must
  // not sit in a common lattice. Decidability from finitely many products is
  // impossible; this depth-3 test is a documented pragmatic stand-in.
  {
    ConditionCheck c{"A2", ConditionStatus::heuristic_pass, ""};
    const auto scaled = spec.scaled_atoms();
    std::vector<double> roots;
    std::vector<PosMatrix> frontier = scaled;
    for (int len = 1; len <= 3; ++len) {
      for (const auto& g : frontier) roots.push_back(std::log(perron_root(g)));
      if (len < 3) {
        std::vector<PosMatrix> next;
        for (const auto& g : frontier)
          for (const auto& a : scaled) next.push_back(g * a);
        frontier = std::move(next);
      }
    }
    const double g = lattice_span(roots, 1e-9);
    if (g > 0.0) {
      c.status = ConditionStatus::heuristic_fail;
      c.detail = "log Perron roots of depth-3 products lie in a lattice of span " + std::to_string(g);
    } else {
      c.detail = "depth-3 log Perron roots generate a dense subgroup (gcd < 1e-9)";
    }
    report.checks.push_back(std::move(c));
  }

  // A3: boundary case. Needs spectral residuals; report them when supplied.
  {
    ConditionCheck c{"A3", ConditionStatus::not_checked, "needs spectral data"};
    if (spec.offspring.mean() <= 1.0) {
      c.status = ConditionStatus::fails;
      c.detail = "E[N] = " + std::to_string(spec.offspring.mean()) + " <= 1";
    } else if (a3_residuals) {
      const auto [m_res, mp_res] = *a3_residuals;
      if (m_res <= 1e-8 && mp_res <= 1e-6) {
        c.status = ConditionStatus::holds;
      } else {
        c.status = ConditionStatus::fails;
      }
      c.detail = "|M(alpha)|=" + std::to_string(m_res) + ", |M'(alpha)|=" + std::to_string(mp_res);
    }
    report.checks.push_back(std::move(c));
  }

  // A4: exists an atom with -log ||lambda A_j|| > kappa_bar + delta.
  {
    ConditionCheck c{"A4", ConditionStatus::fails, ""};
    const auto fk = fk_constants(spec.raw_atoms(), spec.d);
    double best = -1e300;
    for (const auto& g : spec.scaled_atoms()) best = std::max(best, -std::log(op_norm(g)));
    const double delta = best - fk.kappa_bar;
    if (delta > 0.0) {
      c.status = ConditionStatus::holds;
      c.detail = "delta=" + std::to_string(delta);
    } else {
      c.detail = "max of -log||g|| over atoms exceeds kappa_bar by " + std::to_string(delta) +
                 " (need > 0)";
    }
    report.checks.push_back(std::move(c));
  }

  // A5: automatic for the model families implemented here.
  {
    ConditionCheck c{"A5", ConditionStatus::holds, ""};
    switch (spec.offspring.kind()) {
      case OffspringLaw::Kind::poisson:
        c.detail = "holds: light tail (Poisson N, finite atom set)";
        break;
      default:
        c.detail = "holds: finite model";
        break;
    }
    report.checks.push_back(std::move(c));
  }

  return report;
}

}  // namespace mbrw
