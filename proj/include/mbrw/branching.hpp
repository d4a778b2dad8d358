#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mbrw/harmonic.hpp"
#include "mbrw/model.hpp"
#include "mbrw/spectral.hpp"

namespace mbrw {

/// Per-particle state. The Ulam-Harris label is stored structurally as
/// (parent slot in the previous snapshot, child index); label_of() rebuilds
/// the explicit path when snapshots are retained.
struct ParticleRecord {
  Direction X;
  double S = 0.0;
  double min_S_prefix = 0.0;  // min of S over ancestors including self and root
  double min_S_from_k = std::numeric_limits<double>::infinity();  // over ancestors of gen >= k
  uint32_t parent = 0;
  uint32_t child_index = 0;
};

struct GenerationSnapshot {
  int n = 0;
  bool survived = false;  // particles nonempty
  std::vector<ParticleRecord> particles;
};

std::vector<uint32_t> label_of(const std::vector<GenerationSnapshot>& retained, int gen, size_t idx);

struct SimOptions {
  uint64_t particle_cap = 2'000'000;
  int min_from_k = -1;     // track min_S_from_k for this k when >= 0
  double kill_below = -std::numeric_limits<double>::infinity();
  // Optional importance pruning (default off): drop particles with
  // e^{-alpha S}(1 + S^+) < prune_epsilon; discarded mass is reported as an
  // additive bias bound. D_n is sensitive to deep-but-light particles, so this
  // stays off unless explicitly requested.
  double prune_epsilon = 0.0;
  double prune_alpha = 0.0;
};

/// Generation-by-generation breadth-first simulation under P_{x,b}. Only the
/// current generation is retained; callers fold functionals as they stream.
class TreeSimulator {
 public:
  TreeSimulator(const ModelSpec& spec, const Direction& x0, double b0, SimOptions opts, Rng rng);

  const GenerationSnapshot& current() const { return cur_; }
  int generation() const { return cur_.n; }
  bool survived() const { return cur_.survived; }
  double prune_bias_bound() const { return prune_bias_; }

  /// Advances one generation; returns survival of the new generation.
  /// Throws when the population cap is exceeded (no silent truncation).
  bool step();

 private:
  ModelSpec spec_;
  SimOptions opts_;
  Rng rng_;
  GenerationSnapshot cur_, next_;
  // compiled sampling tables
  int d_ = 0, natoms_ = 0;
  std::vector<double> mats_;
  std::vector<double> atom_cdf_;
  double prune_bias_ = 0.0;
};

/// W_n(s) = m(s)^{-n} sum_u e^{-s S_u} r_s(X_u).
double additive_martingale(const GenerationSnapshot& snap, const SpectralData& sd,
                           const DirectionGrid& grid);

/// D_n = sum_u (S_u + l_alpha(X_u)) e^{-alpha S_u} r_alpha(X_u).
double derivative_martingale(const GenerationSnapshot& snap, const BoundaryData& bd,
                             const DirectionGrid& grid);

/// W-tilde (ancestral path stayed >= 0, root included) and W-tilde-tilde
/// (minimum ignores the first k generations). Requires min_from_k tracking
/// for the second component when k > 0.
struct TruncatedPair {
  double w_tilde = 0.0;
  double w_tilde_tilde = 0.0;
};
TruncatedPair truncated_martingales(const GenerationSnapshot& snap, const SpectralData& sd_alpha,
                                    const DirectionGrid& grid, int k);

/// M_n^h = sum_u H_alpha(X_u, S_u) 1{ancestral path stayed in B}.
double h_martingale(const GenerationSnapshot& snap, const HarmonicEvaluator& ev,
                    const SpectralData& sd_alpha, const DirectionGrid& grid);

/// Streaming fold over one replica: records requested functionals at the
/// requested generations without retaining the tree.
struct SeriesRequest {
  std::vector<int> record_at;      // sorted generations
  std::vector<double> s_values;    // W_n(s) for each (eigen-data supplied)
  bool want_D = false;
  bool want_W_tilde = false;
  int w_tilde_tilde_k = -1;
  const HarmonicEvaluator* evaluator = nullptr;  // M_n^h when set
};

struct MartingaleSeries {
  std::vector<int> generations;
  std::vector<uint64_t> population;
  std::vector<std::vector<double>> W;  // [s_index][gen_index]
  std::vector<double> D;
  std::vector<double> W_tilde;
  std::vector<double> W_tilde_tilde;
  std::vector<double> M_h;
  bool survived_to_end = false;
};

MartingaleSeries run_martingale_series(const ModelSpec& spec, const Direction& x0, double b0,
                                       const SeriesRequest& req,
                                       const std::vector<const SpectralData*>& sd_per_s,
                                       const BoundaryData* bd, const DirectionGrid& grid,
                                       SimOptions opts, Rng rng);

}  // namespace mbrw
