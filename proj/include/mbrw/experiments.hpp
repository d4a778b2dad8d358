#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mbrw/branching.hpp"
#include "mbrw/renewal.hpp"
#include "mbrw/report.hpp"
#include "mbrw/spine.hpp"

namespace mbrw {

struct ExperimentConfig {
  ModelSpec base_model;
  CalibrationMode mode = CalibrationMode::fix_alpha;
  double alpha_target = 1.0;
  int grid_size = 512;
  std::vector<int> depths;
  uint64_t replicas = 10'000;
  std::vector<double> s_values;  // Biggins parameters (alpha added automatically)
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware
  uint64_t particle_cap = 2'000'000;
  double b0 = 0.0;
  // tolerances (defaults match the documented verdict rules)
  double ratio_tol = 0.20;
  double stability_tol = 0.10;
  double expectation_tol = 0.10;
  std::vector<double> b_values = {0.0, 2.0, 5.0};  // Seneta-Heyde expectation tier
  std::vector<double> r_values = {0.1, 0.5, 1.0, 2.0, 5.0};  // fixed-point Laplace points
  double laplace_K = 1.0;
};

/// Plot-ready row: one (n, statistic, value, se) record.
struct PlotRow {
  int n = 0;
  std::string statistic;
  double value = 0.0;
  double se = 0.0;
};

struct ExperimentReport {
  std::string name;
  std::string verdict;  // pass | fail | inconclusive
  std::vector<CheckLine> lines;
  std::vector<PlotRow> rows;
  std::map<std::string, std::string> provenance;
  std::string to_json() const;
  std::string to_text() const;
  std::string rows_to_csv() const;
};

/// Calibrated model plus every derived object the experiments share.
struct Workspace {
  ModelSpec spec;  // calibrated
  DirectionGrid grid;
  BoundaryData bd;
  std::unique_ptr<TiltedKernel> kernel;       // primal
  std::unique_ptr<TiltedKernel> dual_kernel;  // transposed atoms, r_alpha^*
  std::optional<VAlphaTable> vtable;

  static Workspace build(const ExperimentConfig& config, bool with_vtable = false,
                         const VEstimateOptions& vopts = {});
};

ExperimentReport biggins_experiment(const ExperimentConfig& config);
ExperimentReport derivative_convergence_experiment(const ExperimentConfig& config);
ExperimentReport seneta_heyde_experiment(const ExperimentConfig& config);
ExperimentReport smoothing_fixed_point_check(const ExperimentConfig& config);

/// Derivative-martingale samples at a fixed depth, one value per replica
/// (zeros for extinct replicas); shared by the fixed-point check and the
/// 1-D oracle comparisons in tests.
std::vector<double> sample_D_at_depth(const Workspace& ws, const Direction& x0, double b0,
                                      int depth, uint64_t replicas, uint64_t master_seed,
                                      int threads, uint64_t particle_cap);

}  // namespace mbrw
