#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbrw/grid.hpp"
#include "mbrw/model.hpp"

namespace mbrw {

/// Dominant eigen-data of the discretized transfer operator P_s (or its
/// conjugate P_s* when dual). r is sup-normalized to 1; nu and pi are
/// probability weights over grid nodes; pi_i is proportional to r_i * nu_i.
struct SpectralData {
  double s = 0.0;
  double m_s = 0.0;
  double residual = 0.0;  // ||P r - m r||_sup / m at return
  bool dual = false;
  int grid_size = 0;
  uint64_t model_hash = 0;
  std::vector<double> r, nu, pi;

  std::string to_json() const;
  static SpectralData from_json_text(const std::string& text);
};

/// Boundary-case data at alpha: m(alpha)=1, m'(alpha)=0 after calibration.
struct BoundaryData {
  double alpha = 0.0;
  double scale_lambda = 0.0;
  double offspring_mean = 0.0;
  double M_value = 0.0;   // log m(alpha) after calibration
  double M_prime = 0.0;   // d/ds log m(s) at alpha after calibration
  double sigma2_alpha = 0.0;
  std::vector<double> ell;  // drift function l_alpha on grid nodes
  SpectralData primal;
  SpectralData dual;

  std::string to_json() const;
  static BoundaryData from_json_text(const std::string& text);
};

/// One application of the discretized transfer operator to a grid function.
std::vector<double> apply_Ps(const ModelSpec& spec, double s, std::span<const double> phi,
                             const DirectionGrid& grid, bool dual = false);

/// Power iteration for the dominant eigen-triple of P_s. Throws MathError on
/// non-convergence after max_iter, carrying the last residual.
SpectralData dominant_eigen(const ModelSpec& spec, double s, const DirectionGrid& grid,
                            double tol = 1e-12, bool dual = false, int max_iter = 100000,
                            const std::vector<double>* warm_start = nullptr);

/// Dual eigen-data with the primal/dual eigenvalue cross-check (Lemma: the
/// spectral radii of P_s and P_s* coincide). m_primal, when absent, is
/// computed on the fly.
SpectralData dominant_eigen_dual(const ModelSpec& spec, double s, const DirectionGrid& grid,
                                 double tol = 1e-12, std::optional<double> m_primal = {});

/// M(s) = log m(s) and M'(s) by central finite difference (documented step).
constexpr double kBigMDerivStep = 1e-4;
std::pair<double, double> big_M(const ModelSpec& spec, double s, const DirectionGrid& grid,
                                double tol = 1e-12);

enum class CalibrationMode { solve_alpha, fix_alpha };

/// Finds/installs the boundary case: m(alpha)=1, m'(alpha)=0.
///   solve_alpha: bisects h(s)=M(s)-sM'(s) over [0.05, 8] (E[N] kept), then
///     shifts scale_lambda by e^{-M'(alpha)}.
///   fix_alpha: takes alpha = alpha_target and rescales both E[N] and lambda
///     from the E[N]=1 spectral data.
/// Returns the updated spec plus boundary data with verified residuals
/// |M(alpha)| <= 1e-8 and |M'(alpha)| <= 1e-6.
std::pair<ModelSpec, BoundaryData> calibrate_boundary(const ModelSpec& spec, CalibrationMode mode,
                                                      const DirectionGrid& grid,
                                                      double alpha_target = 1.0,
                                                      double tol = 1e-13);

/// Markov kernel of the tilted chain Q_alpha built from eigen-data at s:
/// w_j(x) = E[N] q_j e^{s sigma(lambda A_j, x)} r(lambda A_j . x) / (m r(x)).
/// Weights are exact at grid nodes (up to the eigen residual); at off-grid
/// states the interpolated eigenfunction leaves an O(G^-2) defect, so weights
/// are renormalized and the defect is tracked as a diagnostic.
class TiltedKernel {
 public:
  /// When sd.dual is set the kernel runs on transposed atoms with r_alpha*,
  /// i.e. it is the dual-walk kernel Q^{alpha,*}.
  TiltedKernel(const ModelSpec& spec, const DirectionGrid& grid, SpectralData sd);

  int atom_count() const { return natoms_; }
  int dim() const { return d_; }
  const DirectionGrid& grid() const { return *grid_; }
  const SpectralData& data() const { return sd_; }

  /// Fills w (renormalized probabilities), inc (S-increments = -cocycle) and
  /// optionally next directions; returns the raw-sum deviation |sum w - 1|.
  double weights_at(const Direction& x, double* w, double* inc, Direction* next = nullptr) const;

  /// One step of the tilted chain: samples an atom, updates (x, S).
  void step(Direction& x, double& S, Rng& rng) const;

  /// Same, returning the sampled atom index.
  int step_indexed(Direction& x, double& S, Rng& rng) const;

  /// Max raw-sum deviation seen by step() since construction.
  double max_step_deviation() const { return max_dev_; }

  /// Applies Q to a grid function (node-level, stencil-based).
  std::vector<double> apply(std::span<const double> phi) const;

  /// Applies the t-tilted kernel Q_{s,t} phi(x) = sum_j w_j(x) e^{-t inc_j(x)} phi(next_j).
  std::vector<double> apply_tilted(std::span<const double> phi, double t) const;

  /// Adjoint application (row vector times kernel matrix).
  std::vector<double> apply_transpose(std::span<const double> mu) const;

  /// Invariant probability vector of the discretized kernel, iterated to
  /// machine precision (warm-started from the spectral pi).
  std::vector<double> invariant_measure() const;

  /// Node-level weights w_j(x_i), increments and stencils (exact atomic data).
  double node_weight(int node, int atom) const { return nw_[idx(node, atom)]; }
  double node_increment(int node, int atom) const { return ninc_[idx(node, atom)]; }

  double interp_r(const Direction& x) const { return grid_->interp(sd_.r, x); }

 private:
  size_t idx(int node, int atom) const { return static_cast<size_t>(node) * natoms_ + atom; }
  const DirectionGrid* grid_;
  SpectralData sd_;
  int d_ = 0, natoms_ = 0;
  double en_ = 0.0, m_ = 0.0;
  std::vector<double> mats_;     // scaled atoms, row-major, atom-major
  std::vector<double> q_;        // atom weights
  std::vector<double> nw_;       // node x atom kernel weights
  std::vector<double> ncdf_;     // node x atom cumulative weights
  std::vector<double> ninc_;     // node x atom increments
  std::vector<DirectionGrid::Stencil> nsten_;  // node x atom next-state stencils
  mutable double max_dev_ = 0.0;
};

/// Drift function l_alpha by the truncated Neumann series of the Poisson
/// equation l = psi + Q l, psi(x) = E_Q[S_1 - S_0 | X_0 = x].
/// Throws "model not at boundary" when |pi(psi)| > 1e-6.
std::vector<double> ell_alpha(const TiltedKernel& kernel, double tol = 1e-12);

/// Asymptotic variance sigma_alpha^2 = Lambda''(0) of the tilted kernel
/// cumulant Lambda(t), by central second difference with step 1e-3.
/// Throws "arithmetic/degenerate model" when the result is <= 1e-10.
constexpr double kSigmaDerivStep = 1e-3;
double sigma2_alpha(const TiltedKernel& kernel, double tol = 1e-12);

}  // namespace mbrw
