#include "mbrw/model_zoo.hpp"

#include <cmath>

namespace mbrw::zoo {

namespace {

ModelSpec two_atoms(int d, PosMatrix a1, PosMatrix a2, OffspringLaw off, std::string label) {
  ModelSpec spec;
  spec.d = d;
  spec.offspring = std::move(off);
  spec.atoms.emplace_back(std::move(a1), 0.5);
  spec.atoms.emplace_back(std::move(a2), 0.5);
  spec.scale_lambda = 1.0;
  spec.label = std::move(label);
  spec.validate();
  return spec;
}

}  // namespace

ModelSpec rank_one_pair(double a) {
  const double c1 = std::exp(-a) / 2.0, c2 = std::exp(a) / 2.0;
  return two_atoms(2, PosMatrix::all_ones(2).scaled(c1), PosMatrix::all_ones(2).scaled(c2),
                   OffspringLaw::finite_support({{1, 0.5}, {2, 0.5}}),
                   "rank-one-pair(a=" + std::to_string(a) + ")");
}

ModelSpec single_matrix() {
  ModelSpec spec;
  spec.d = 2;
  spec.offspring = OffspringLaw::deterministic(1);
  spec.atoms.emplace_back(PosMatrix(2, {2, 1, 1, 1}), 1.0);
  spec.scale_lambda = 1.0;
  spec.label = "single-matrix-2111";
  spec.validate();
  return spec;
}

ModelSpec positive_pair() {
  ModelSpec spec;
  spec.d = 2;
  spec.offspring = OffspringLaw::finite_support({{1, 0.4}, {2, 0.4}, {3, 0.2}});
  spec.atoms.emplace_back(PosMatrix(2, {0.4, 0.2, 0.1, 0.2}), 0.5);
  spec.atoms.emplace_back(PosMatrix(2, {0.25, 0.1, 0.3, 0.4}), 0.5);
  spec.scale_lambda = 1.0;
  spec.label = "positive-pair-kappa4";
  spec.validate();
  return spec;
}

ModelSpec scaled_matrix_pair(double a) {
  const PosMatrix b(2, {2, 1, 1, 1});
  return two_atoms(2, b.scaled(std::exp(-a)), b.scaled(std::exp(a)),
                   OffspringLaw::finite_support({{1, 0.4}, {2, 0.4}, {3, 0.2}}),
                   "scaled-matrix-pair(a=" + std::to_string(a) + ")");
}

ModelSpec rank_one_poisson(double a, double mean) {
  const double c1 = std::exp(-a) / 2.0, c2 = std::exp(a) / 2.0;
  return two_atoms(2, PosMatrix::all_ones(2).scaled(c1), PosMatrix::all_ones(2).scaled(c2),
                   OffspringLaw::poisson(mean),
                   "rank-one-poisson(a=" + std::to_string(a) + ")");
}

}  // namespace mbrw::zoo
