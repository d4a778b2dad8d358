#pragma once

#include "mbrw/model.hpp"

namespace mbrw {

/// Built-in example models (uncalibrated bases).
namespace zoo {

/// Two rank-one atoms (e^{-a}/2) J and (e^{+a}/2) J, offspring on {1, 2}.
/// The projective action collapses to the simplex center after one step, so
/// every functional has a scalar random-walk closed form. a = 0.45 calibrates
/// at alpha = 1 to E[N] ~ 1.096.
ModelSpec rank_one_pair(double a = 0.45);

/// Single strictly positive matrix [[2,1],[1,1]] with N = 1:
/// m(s) = rho^s with rho = (3 + sqrt 5)/2.
ModelSpec single_matrix();

/// Two strictly positive atoms with kappa = 4 and non-lattice Perron roots;
/// offspring on {1, 2, 3}. Exercises direction-dependent kernels.
ModelSpec positive_pair();

/// Scalar multiples of one positive matrix: c_j B with B = [[2,1],[1,1]],
/// c_j = e^{-+ a}; kappa = 2. Large a keeps condition A4 satisfiable.
ModelSpec scaled_matrix_pair(double a = 1.6);

/// rank_one_pair with Poisson offspring (mean adjustable by calibration).
ModelSpec rank_one_poisson(double a = 0.45, double mean = 1.5);

}  // namespace zoo

}  // namespace mbrw
