#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbrw/cone.hpp"
#include "mbrw/rng.hpp"

namespace mbrw {

/// Offspring count law N. Supercritical models need mean > 1.
class OffspringLaw {
 public:
  enum class Kind { deterministic, finite_support, poisson };

  static OffspringLaw deterministic(int n);
  static OffspringLaw finite_support(std::vector<std::pair<int, double>> pmf);
  static OffspringLaw poisson(double mean);

  Kind kind() const { return kind_; }
  double mean() const { return mean_; }

  int sample(Rng& rng, int cap = 1'000'000) const;

  /// pmf as (count, prob) pairs; Poisson is truncated where the tail mass
  /// drops below 1e-15 (used by exact size-biased samplers and enumeration).
  std::vector<std::pair<int, double>> pmf() const;

  /// Returns a law of the same family with the given mean. finite_support is
  /// exponentially tilted (q_n proportional to p_n theta^n); poisson gets the
  /// mean directly; deterministic only accepts its own mean.
  OffspringLaw with_mean(double target) const;

  std::string describe() const;

 private:
  OffspringLaw() = default;
  Kind kind_ = Kind::deterministic;
  double mean_ = 0.0;
  int det_n_ = 0;
  double poisson_mean_ = 0.0;
  std::vector<std::pair<int, double>> support_;  // sorted by count
  std::vector<double> cdf_;                      // for finite_support sampling
};

/// Reproduction law: N children, each an i.i.d. draw of lambda * A_j with
/// probability q_j, independent of N. This family keeps the intensity measure
/// exactly atomic and the size-biased law exactly samplable.
struct ModelSpec {
  int d = 2;
  OffspringLaw offspring = OffspringLaw::deterministic(1);
  std::vector<std::pair<PosMatrix, double>> atoms;  // (matrix, weight)
  double scale_lambda = 1.0;
  std::string label;

  void validate() const;  // throws ConfigError with a path into the document
  std::vector<PosMatrix> scaled_atoms() const;
  std::vector<PosMatrix> raw_atoms() const;
  int atom_count() const { return static_cast<int>(atoms.size()); }
  uint64_t hash() const;  // FNV-1a over the canonical JSON rendering

  std::string to_json() const;
  static ModelSpec from_json_text(const std::string& text);
  static ModelSpec load(const std::string& path);
  void save(const std::string& path) const;
};

/// Atomic intensity measure mu: mass E[N] * q_j at lambda * A_j.
struct IntensityMeasure {
  std::vector<std::pair<PosMatrix, double>> atoms;  // (matrix, mass)
  double total_mass = 0.0;                          // equals E[N]
};

IntensityMeasure intensity(const ModelSpec& spec);

/// One generation: draws N, then N i.i.d. scaled atoms (empty when N = 0).
std::vector<PosMatrix> sample_generation(const ModelSpec& spec, Rng& rng);

/// Same draw but returning atom indices; the hot paths use this.
void sample_generation_indices(const ModelSpec& spec, Rng& rng, std::vector<int>& out);

enum class ConditionStatus { holds, fails, heuristic_pass, heuristic_fail, not_checked };

struct ConditionCheck {
  std::string name;
  ConditionStatus status = ConditionStatus::not_checked;
  std::string detail;
};

struct ConditionReport {
  std::vector<ConditionCheck> checks;
  const ConditionCheck* find(const std::string& name) const;
  std::string to_json() const;
};

/// Checks A1*, A2 (dense-log-eigenvalue heuristic on products up to length 3),
/// A3 (via the boundary residuals when supplied), A4, A5.
/// a3_residuals, when present, carries (|M(alpha)|, |M'(alpha)|) from the
/// spectral module; otherwise A3 is reported as not_checked.
ConditionReport check_conditions(const ModelSpec& spec,
                                 std::optional<std::pair<double, double>> a3_residuals = {});

/// Perron root of a strictly positive matrix (power iteration; exact formula
/// for d = 2). Used by the A2 lattice heuristic and by test oracles.
double perron_root(const PosMatrix& g);

}  // namespace mbrw
