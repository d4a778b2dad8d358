#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "mbrw/branching.hpp"
#include "mbrw/harmonic.hpp"
#include "mbrw/report.hpp"
#include "mbrw/spectral.hpp"

namespace mbrw {

struct TiltedChainState {
  Direction X;
  double S = 0.0;
  int step = 0;
};

/// One step of the tilted chain Q^alpha_{x,b}.
inline TiltedChainState tilted_step(TiltedChainState state, const TiltedKernel& kernel, Rng& rng) {
  kernel.step(state.X, state.S, rng);
  ++state.step;
  return state;
}

/// One family drawn from the size-biased point process, with the spine child
/// selected proportionally to H_alpha * 1_B.
struct BiasedGeneration {
  std::vector<Direction> X;       // children directions
  std::vector<double> S;          // children positions
  std::vector<int> atom_index;    // which atom produced each child
  int spine = -1;                 // index of the spine child
};

/// Exact two-step sampler for the i.i.d.-children model: size-biased count,
/// one H-biased child, the rest unbiased, spine slot uniform. The rejection
/// sampler (exact_sampler = false) proposes from the original law and accepts
/// with probability (sum H 1_B) / (M H(x,b)); it exists as a distribution
/// oracle and requires a finite configuration bound (finite-support N).
BiasedGeneration sample_biased_generation(const Direction& x, double b, const ModelSpec& spec,
                                          const TiltedKernel& kernel, const HarmonicEvaluator& ev,
                                          Rng& rng, bool exact_sampler = true);

struct SpineStep {
  int n_children = 0;
  int spine_child = 0;             // index within the family
  Direction X;                     // spine state after the step
  double S = 0.0;
  std::vector<Direction> sib_X;    // brothers
  std::vector<double> sib_S;
};

struct SpinePath {
  Direction x0;
  double b0 = 0.0;
  std::vector<SpineStep> steps;
  std::string to_jsonl() const;  // one generation per line
};

struct SpineSimResult {
  SpinePath path;
  std::vector<GenerationSnapshot> snapshots;  // merged tree, generations 0..depth
};

/// Spinal branching simulation: the spine reproduces via the size-biased law,
/// every brother roots an ordinary branching subtree. When emit_tree is false
/// only the spine trajectory is produced (its law does not depend on the
/// subtrees).
SpineSimResult simulate_with_spine(const Direction& x0, double b0, const ModelSpec& spec,
                                   const TiltedKernel& kernel, const HarmonicEvaluator& ev,
                                   int depth, Rng& rng, bool emit_tree = true,
                                   uint64_t particle_cap = 2'000'000);

using PathFunctional =
    std::function<double(const std::vector<Direction>&, const std::vector<double>&)>;

/// Many-to-one check at depth n: MC estimate of E_{x,b}[sum_u f(path)] against
/// r_s(x) m(s)^n E_Q[f e^{s(S_n - S_0)} / r_s(X_n)].
VerifyReport verify_many_to_one(const ModelSpec& spec, const TiltedKernel& kernel,
                                const Direction& x, double b, int n,
                                const std::vector<std::pair<std::string, PathFunctional>>& fs,
                                uint64_t replicas, uint64_t master_seed, int threads);

/// Exact n = 1 check by finite atomic sums; returns the max absolute
/// discrepancy over the supplied functionals.
double many_to_one_exact1(const ModelSpec& spec, const TiltedKernel& kernel, const Direction& x,
                          double b, const std::vector<PathFunctional>& fs);

/// Spinal-measure verification: spinal-sampler expectations of tree
/// statistics against the M_n^h-reweighted plain simulation.
VerifyReport verify_spinal_measure(const ModelSpec& spec, const TiltedKernel& kernel,
                                   const HarmonicEvaluator& ev, const Direction& x, double b,
                                   int n, uint64_t replicas, uint64_t master_seed, int threads);

using FactorFunctional = std::function<double(const std::vector<const PosMatrix*>&)>;

/// Exchangeability of factors: E[sum_{|u|=n} f(forward factors)] equals the
/// exact mu^{(x) n} sum and the reversed-order MC estimate. f must be
/// order-sensitive for the reversed check to carry information.
VerifyReport verify_exchangeability(const ModelSpec& spec, int n,
                                    const std::vector<std::pair<std::string, FactorFunctional>>& fs,
                                    uint64_t replicas, uint64_t master_seed, int threads);

}  // namespace mbrw
