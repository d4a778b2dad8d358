#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mbrw/harmonic.hpp"
#include "mbrw/report.hpp"
#include "mbrw/spectral.hpp"
#include "mbrw/stats.hpp"

namespace mbrw {

enum class WalkMeasure { primal, dual };

struct WalkPath {
  std::vector<Direction> X;
  std::vector<double> S;  // S[0] = b0
  WalkMeasure measure = WalkMeasure::primal;
};

/// Simulates the tilted walk (primal Q^alpha) or the dual walk (Q^{alpha,*},
/// transposed atoms with r_alpha^*). The kernel passed in must match.
WalkPath walk(const TiltedKernel& kernel, const Direction& x0, double b0, int steps, Rng& rng);

/// First passage / ladder bookkeeping for a realized path.
struct StoppingTimes {
  /// tau_y^- = first k >= 1 with y + S_k < 0 (the paper's index typo S_n is
  /// read as S_j); -1 when it does not occur within the path.
  static int tau_minus(std::span<const double> S, double y);
  /// tau_y^+ = first k >= 1 with S_k - y > 0.
  static int tau_plus(std::span<const double> S, double y);
  /// Weakly ascending ladder epochs (T_0 = 0 excluded from the output).
  static std::vector<int> weak_ascending(std::span<const double> S);
  /// Weakly descending ladder epochs.
  static std::vector<int> weak_descending(std::span<const double> S);
  /// L_n = min_{0<=k<=n} S_k.
  static std::vector<double> running_min(std::span<const double> S);
};

struct ReversedBoundReport {
  double bound = 0.0;       // kappa_bar + log d
  double max_gap = 0.0;     // max observed |S_n - S_k - S*_{n,n-k}|
  uint64_t paths = 0;
  uint64_t violations = 0;  // must be 0
};

/// Deterministic two-sided bound between the walk increments and the reversed
/// transposed products built from the same factors. A violation is a hard
/// failure (it indicates a cocycle bug), reported rather than thrown so the
/// caller can print diagnostics.
ReversedBoundReport reversed_bound_check(const ModelSpec& spec, const TiltedKernel& kernel, int n,
                                         uint64_t replicas, uint64_t master_seed, int threads);

/// Monte Carlo table for the harmonic function V_alpha(x, y).
struct VAlphaTable {
  DirectionGrid xgrid;           // coarse direction grid
  std::vector<double> y_grid;    // [0, y_max], uniform
  std::vector<double> values;    // xgrid.size() x y_grid.size(), y fastest
  double certified_error = 0.0;  // plateau gap + 2 SE, inflated by harmonicity
  double stat_error = 0.0;
  double harmonicity_residual = 0.0;
  double c_low = 0.0, c_high = 0.0;  // fitted bounds in c'(1+y) <= V <= c(1+y)

  double eval(const Direction& x, double y) const;
  std::string to_json() const;
  static VAlphaTable from_json_text(const std::string& text);
};

struct VEstimateOptions {
  int coarse_x = 9;             // coarse direction-grid size
  double y_max = 10.0;
  double y_step = 0.5;
  std::vector<int> n_schedule = {64, 256, 1024};
  uint64_t replicas = 100'000;  // per x-node
};

/// Direct plateau MC for V_alpha(x, y) = lim E[(y + S_n); tau_y^- > n], with a
/// one-step exact-kernel harmonicity post-check over all table points.
VAlphaTable estimate_V(const TiltedKernel& kernel, const VEstimateOptions& opts,
                       uint64_t master_seed, int threads);

/// Harmonic evaluator h = V_alpha^beta(x, y) = V_alpha(x, y + beta), B = [-beta, inf).
HarmonicEvaluator make_V_evaluator(const VAlphaTable& table, double beta);

enum class RenewalVariant { killed_primal, ladder_dual_plus, ladder_primal_T };

struct RenewalOptions {
  double y = 0.0;           // killing level parameter for killed_primal
  int horizon = 65536;
  uint64_t replicas = 100'000;
};

struct RenewalEstimate {
  Estimate estimate;
  double tail_bound = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
  std::string variant;
};

/// Expected window occupancy of the killed walk, or of the ladder-height
/// process. Errors out when the estimated truncation tail exceeds 1% of the
/// estimate, suggesting a horizon.
RenewalEstimate renewal_measure(const TiltedKernel& primal, const TiltedKernel& dual,
                                const Direction& x0, RenewalVariant variant, double t, double a,
                                const RenewalOptions& opts, uint64_t master_seed, int threads);

/// Shared-path scan over unit windows [t, t+1) for t in [t_min, t_max).
struct RenewalScan {
  double t_min = 0.0;
  std::vector<double> estimates;  // one per unit bin
  std::vector<double> ses;
  std::vector<double> tail_bounds;
};
RenewalScan renewal_scan(const TiltedKernel& kernel, const Direction& x0, RenewalVariant variant,
                         double y, double t_min, double t_max, const RenewalOptions& opts,
                         uint64_t master_seed, int threads);

/// F(b) = (1/b) sum_n E[(b + S_n) f(b + S_n); tau_b^- > n], truncated at the
/// horizon with an empirical tail bound.
struct GreenPoint {
  double b = 0.0;
  double value = 0.0;
  double se = 0.0;
  double tail_bound = 0.0;
};
std::vector<GreenPoint> green_functional(const TiltedKernel& kernel, const Direction& x0,
                                         const std::function<double(double)>& f,
                                         const std::vector<double>& b_list, int horizon,
                                         uint64_t replicas, uint64_t master_seed, int threads);

/// Validates the built-in profile functions: bounded, nonincreasing,
/// integrable first moment (checked numerically).
void check_green_profile(const std::function<double(double)>& f);

/// Spitzer-type product bound (window functions with bounded support).
struct WindowFn {
  std::function<double(double)> fn;
  double lo = 0.0, hi = 0.0;  // support
};
struct SpitzerReport {
  double lhs = 0.0, lhs_se = 0.0;
  double factor_dual = 0.0, factor_primal = 0.0;
  double ratio = 0.0;  // lhs / (factor_dual * factor_primal)
};
SpitzerReport spitzer_bound_check(const TiltedKernel& primal, const TiltedKernel& dual,
                                  const Direction& x0, const WindowFn& phi, const WindowFn& h,
                                  double c1, int horizon, uint64_t replicas, uint64_t master_seed,
                                  int threads);

/// Approximate-duality sandwich: the primal walk killed at tau_{-c1}^- has
/// window occupancy bounded by a constant times the dual weak-ascending
/// ladder occupancy of the c1-widened window. Reports the fitted constant
/// (max ratio over the scan) and the per-window ratios.
struct DualitySandwich {
  std::vector<double> t_values;
  std::vector<double> lhs, rhs;
  double fitted_C = 0.0;     // max over windows with rhs > 0
  uint64_t empty_rhs = 0;    // windows with rhs = 0 but lhs > 0 (must be 0)
};
DualitySandwich duality_sandwich_check(const TiltedKernel& primal, const TiltedKernel& dual,
                                       const Direction& x0, double c1, double t_min, double t_max,
                                       const RenewalOptions& opts, uint64_t master_seed,
                                       int threads);

/// Conditioned local-limit checks: (i) log-log slope of the window
/// probability, (ii) sqrt(n)-scaled exit probability against the
/// 2 V / (sigma sqrt(2 pi)) limit value.
struct ClltReport {
  std::vector<int> n_list;
  std::vector<double> window_prob, window_se;  // Q(y + S_n in [0,z], tau_y > n)
  std::vector<double> exit_prob, exit_se;      // Q(min_{1..n} S >= -b)
  double slope = 0.0;
  double plateau_value = 0.0;  // sqrt(n_max) * exit_prob at n_max
  double plateau_target = 0.0; // 2 V(x,b) / (sigma sqrt(2 pi))
  double fitted_cprime = 0.0;  // max_n sqrt(n) p(n) / (1 + b)
  bool slope_ok = false;
  bool plateau_ok = false;
};
ClltReport cllt_slope_check(const TiltedKernel& kernel, const VAlphaTable& vtab,
                            const Direction& x0, double y, double z, double b, double sigma2,
                            const std::vector<int>& n_list, uint64_t replicas,
                            uint64_t master_seed, int threads);

}  // namespace mbrw
