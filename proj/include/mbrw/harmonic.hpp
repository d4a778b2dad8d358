#pragma once

#include <functional>
#include <limits>

#include "mbrw/cone.hpp"
#include "mbrw/grid.hpp"
#include "mbrw/spectral.hpp"

namespace mbrw {

/// Harmonic function h for the tilted chain killed outside S^{d-1}_+ x B,
/// together with its killing set B. Two shapes are used: h = 1 with B = R,
/// and h = V_alpha^beta with B = [-beta, inf).
struct HarmonicEvaluator {
  enum class Kind { constant_one, V_alpha_beta };

  Kind kind = Kind::constant_one;
  double beta = 0.0;
  double B_lower = -std::numeric_limits<double>::infinity();
  std::function<double(const Direction&, double)> h_fn;  // set for V_alpha_beta

  static HarmonicEvaluator constant_one() { return HarmonicEvaluator{}; }

  bool in_B(double s) const { return s >= B_lower; }

  double h(const Direction& x, double s) const {
    if (kind == Kind::constant_one) return 1.0;
    return h_fn(x, s);
  }

  /// H_alpha(y, s) = r_alpha(y) h(y, s) e^{-alpha s}; zero outside B.
  double H(const Direction& y, double s, const SpectralData& sd_alpha,
           const DirectionGrid& grid) const {
    if (!in_B(s)) return 0.0;
    return grid.interp(sd_alpha.r, y) * h(y, s) * std::exp(-sd_alpha.s * s);
  }
};

}  // namespace mbrw
