#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mbrw/branching.hpp"
#include "mbrw/model_zoo.hpp"
#include "mbrw/parallel.hpp"
#include "mbrw/stats.hpp"

using namespace mbrw;

namespace {

struct Fixture {
  ModelSpec spec;
  DirectionGrid grid;
  BoundaryData bd;
  Direction x0;
  Fixture()
      : spec(zoo::rank_one_pair(0.45)),
        grid(DirectionGrid::make(2, 128)),
        bd{},
        x0(Direction::uniform(2)) {
    auto [s, b] = calibrate_boundary(spec, CalibrationMode::fix_alpha, grid, 1.0);
    spec = std::move(s);
    bd = std::move(b);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("tree simulation basics") {
  SUBCASE("N=0 dies at generation 1") {
    ModelSpec spec;
    spec.d = 2;
    spec.offspring = OffspringLaw::deterministic(0);
    spec.atoms.emplace_back(PosMatrix(2, {1, 1, 1, 1}), 1.0);
    TreeSimulator sim(spec, Direction::uniform(2), 0.0, {}, Rng(1, 0));
    CHECK_FALSE(sim.step());
    CHECK(sim.current().survived == false);
  }
  SUBCASE("N=1 single atom is a deterministic chain") {
    ModelSpec spec = zoo::single_matrix();
    const double b0 = 2.0;
    TreeSimulator sim(spec, Direction::vertex(2, 0), b0, {}, Rng(1, 0));
    Direction x = Direction::vertex(2, 0);
    double S = b0;
    const PosMatrix g = spec.atoms[0].first;
    for (int n = 1; n <= 12; ++n) {
      REQUIRE(sim.step());
      REQUIRE(sim.current().particles.size() == 1);
      S -= cocycle(g, x);
      x = act(g, x);
      const auto& p = sim.current().particles[0];
      CHECK(p.S == doctest::Approx(S).epsilon(1e-12));
      CHECK(p.X[0] == doctest::Approx(x[0]).epsilon(1e-12));
    }
  }
  SUBCASE("expected population tracks E[N]^n") {
    const auto& f = fixture();
    RunningStat pop;
    const int depth = 64;
    for (uint64_t rep = 0; rep < 3000; ++rep) {
      TreeSimulator sim(f.spec, f.x0, 0.0, {}, Rng(12, rep));
      bool alive = true;
      for (int n = 0; n < depth && alive; ++n) alive = sim.step();
      pop.add(static_cast<double>(sim.current().particles.size()));
    }
    const double expected = std::pow(f.spec.offspring.mean(), depth);
    CHECK(within_se(pop.mean(), pop.se(), expected, 0.0, 3.0));
  }
  SUBCASE("population cap raises with the generation in the message") {
    ModelSpec spec = fixture().spec;
    spec.offspring = OffspringLaw::deterministic(2);
    SimOptions opts;
    opts.particle_cap = 100;
    TreeSimulator sim(spec, fixture().x0, 0.0, opts, Rng(1, 0));
    CHECK_THROWS_WITH_AS(
        [&] {
          for (int i = 0; i < 20; ++i) sim.step();
        }(),
        doctest::Contains("population cap exceeded at generation"), MathError);
  }
}

TEST_CASE("particle recursion invariants against label reconstruction") {
  const auto& f = fixture();
  Rng rng(77, 0);
  SimOptions opts;
  TreeSimulator sim(f.spec, f.x0, 0.5, opts, rng);
  std::vector<GenerationSnapshot> snaps{sim.current()};
  for (int n = 1; n <= 6; ++n) {
    sim.step();
    snaps.push_back(sim.current());
  }
  const auto scaled = f.spec.scaled_atoms();
  // Recompute every particle's state from its ancestry through the recursion
  // X_child = g . X_parent, S_child = S_parent - sigma(g, X_parent).
  for (int gen = 1; gen < static_cast<int>(snaps.size()); ++gen) {
    for (size_t i = 0; i < snaps[gen].particles.size(); ++i) {
      const auto label = label_of(snaps, gen, i);
      CHECK(label.size() == static_cast<size_t>(gen));
      const auto& p = snaps[gen].particles[i];
      const auto& parent = snaps[gen - 1].particles[p.parent];
      CHECK(p.min_S_prefix == doctest::Approx(std::min(parent.min_S_prefix, p.S)));
      CHECK(p.min_S_prefix <= 0.5 + 1e-12);
    }
  }
}

TEST_CASE("martingale folds") {
  const auto& f = fixture();
  SUBCASE("W at generation zero is r(x0)") {
    TreeSimulator sim(f.spec, f.x0, 0.0, {}, Rng(1, 0));
    CHECK(additive_martingale(sim.current(), f.bd.primal, f.grid) ==
          doctest::Approx(f.grid.interp(f.bd.primal.r, f.x0)));
  }
  SUBCASE("D at generation zero is (b0 + l) e^{-a b0} r") {
    const double b0 = 1.25;
    TreeSimulator sim(f.spec, f.x0, b0, {}, Rng(1, 0));
    const double expected = (b0 + f.grid.interp(f.bd.ell, f.x0)) *
                            std::exp(-f.bd.alpha * b0) * f.grid.interp(f.bd.primal.r, f.x0);
    CHECK(derivative_martingale(sim.current(), f.bd, f.grid) == doctest::Approx(expected));
  }
  SUBCASE("W and D replica means are conserved (martingale property)") {
    const double b0 = 1.0;
    const uint64_t R = 20000;
    std::vector<double> w5(R), d10(R), w5prev(R), d10prev(R);
    parallel_for(R, 2, [&](uint64_t rep) {
      SeriesRequest req;
      req.record_at = {5, 10};
      req.s_values = {f.bd.alpha};
      req.want_D = true;
      const auto series = run_martingale_series(f.spec, f.x0, b0, req, {&f.bd.primal}, &f.bd,
                                                f.grid, {}, Rng(31, rep));
      w5prev[rep] = series.W[0][0];
      w5[rep] = series.W[0][1];
      d10prev[rep] = series.D[0];
      d10[rep] = series.D[1];
    });
    RunningStat W5, D10, dW, dD;
    for (uint64_t rep = 0; rep < R; ++rep) {
      W5.add(w5[rep]);
      D10.add(d10[rep]);
      dW.add(w5[rep] - w5prev[rep]);
      dD.add(d10[rep] - d10prev[rep]);
    }
    const double W0 = f.grid.interp(f.bd.primal.r, f.x0) * std::exp(-f.bd.alpha * b0);
    const double D0 = (b0 + f.grid.interp(f.bd.ell, f.x0)) * std::exp(-f.bd.alpha * b0) *
                      f.grid.interp(f.bd.primal.r, f.x0);
    CHECK(within_se(W5.mean(), W5.se(), W0, 0.0, 3.0));
    CHECK(within_se(D10.mean(), D10.se(), D0, 0.0, 3.0));
    // Increment means vanish at every recorded lag.
    CHECK(within_se(dW.mean(), dW.se(), 0.0, 0.0, 3.0));
    CHECK(within_se(dD.mean(), dD.se(), 0.0, 0.0, 3.0));
  }
}

TEST_CASE("truncated martingales") {
  const auto& f = fixture();
  SUBCASE("high start: no killing, W~ = W") {
    SeriesRequest req;
    req.record_at = {8};
    req.s_values = {f.bd.alpha};
    req.want_W_tilde = true;
    req.w_tilde_tilde_k = 0;
    const double b0 = 50.0;  // min over 8 generations cannot reach 0
    const auto series = run_martingale_series(f.spec, f.x0, b0, req, {&f.bd.primal}, &f.bd,
                                              f.grid, {}, Rng(5, 0));
    CHECK(series.W_tilde[0] == doctest::Approx(series.W[0][0]).epsilon(1e-12));
    CHECK(series.W_tilde_tilde[0] == doctest::Approx(series.W_tilde[0]).epsilon(1e-12));
  }
  SUBCASE("negative root kills W~ entirely") {
    SeriesRequest req;
    req.record_at = {4};
    req.want_W_tilde = true;
    const auto series =
        run_martingale_series(f.spec, f.x0, -0.5, req, {}, &f.bd, f.grid, {}, Rng(5, 0));
    CHECK(series.W_tilde[0] == 0.0);
  }
  SUBCASE("dropping the first k generations only adds mass") {
    for (uint64_t rep = 0; rep < 200; ++rep) {
      SeriesRequest req;
      req.record_at = {12};
      req.want_W_tilde = true;
      req.w_tilde_tilde_k = 3;
      const auto series =
          run_martingale_series(f.spec, f.x0, 0.2, req, {}, &f.bd, f.grid, {}, Rng(6, rep));
      CHECK(series.W_tilde_tilde[0] >= series.W_tilde[0] - 1e-15);
    }
  }
  SUBCASE("coupling frequency grows with k") {
    // Fraction of replicas with W~~_{n,k} = W_n for all recorded n.
    const uint64_t R = 400;
    double freq[2];
    for (int ki = 0; ki < 2; ++ki) {
      const int k = ki == 0 ? 2 : 10;
      uint64_t coupled = 0;
      for (uint64_t rep = 0; rep < R; ++rep) {
        SeriesRequest req;
        req.record_at = {16, 24, 32};
        req.s_values = {f.bd.alpha};
        req.w_tilde_tilde_k = k;
        const auto series =
            run_martingale_series(f.spec, f.x0, 0.0, req, {&f.bd.primal}, &f.bd, f.grid, {},
                                  Rng(777, rep));
        bool all_equal = true;
        for (size_t i = 0; i < series.generations.size(); ++i) {
          if (std::abs(series.W_tilde_tilde[i] - series.W[0][i]) > 1e-12) all_equal = false;
        }
        if (all_equal) ++coupled;
      }
      freq[ki] = static_cast<double>(coupled) / R;
    }
    CHECK(freq[1] > freq[0]);
    CHECK(freq[1] > 0.5);
  }
}

TEST_CASE("h martingale with h = 1 reduces to the additive martingale") {
  const auto& f = fixture();
  const HarmonicEvaluator ev = HarmonicEvaluator::constant_one();
  TreeSimulator sim(f.spec, f.x0, 0.3, {}, Rng(9, 0));
  for (int n = 0; n < 6; ++n) {
    const double mh = h_martingale(sim.current(), ev, f.bd.primal, f.grid);
    const double w = additive_martingale(sim.current(), f.bd.primal, f.grid) *
                     std::pow(f.bd.primal.m_s, sim.current().n);
    CHECK(mh == doctest::Approx(w).epsilon(1e-12));
    sim.step();
  }
}

TEST_CASE("boundary-model path behavior") {
  const auto& f = fixture();
  SUBCASE("W_n(alpha) survivor median decreases beyond n = 20") {
    const uint64_t R = 1500;
    std::vector<double> w20, w40, w80;
    for (uint64_t rep = 0; rep < R; ++rep) {
      SeriesRequest req;
      req.record_at = {20, 40, 80};
      req.s_values = {f.bd.alpha};
      const auto series = run_martingale_series(f.spec, f.x0, 0.0, req, {&f.bd.primal}, &f.bd,
                                                f.grid, {}, Rng(13, rep));
      if (!series.survived_to_end) continue;
      w20.push_back(series.W[0][0]);
      w40.push_back(series.W[0][1]);
      w80.push_back(series.W[0][2]);
    }
    CHECK(median(w40) < median(w20));
    CHECK(median(w80) < median(w40));
  }
  SUBCASE("generation minima drift upward on survival") {
    const uint64_t R = 600;
    uint64_t above = 0, total = 0;
    for (uint64_t rep = 0; rep < R; ++rep) {
      TreeSimulator sim(f.spec, f.x0, 0.0, {}, Rng(14, rep));
      double min32 = 0.0, min64 = 0.0;
      bool alive = true;
      for (int n = 1; n <= 64 && alive; ++n) {
        alive = sim.step();
        if (!alive) break;
        double m = 1e300;
        for (const auto& p : sim.current().particles) m = std::min(m, p.S);
        if (n == 32) min32 = m;
        if (n == 64) min64 = m;
      }
      if (!alive) continue;
      ++total;
      if (min64 > min32) ++above;
    }
    CHECK(static_cast<double>(above) / total > 0.5);
  }
}

TEST_CASE("importance pruning is off by default and reports a bias bound") {
  const auto& f = fixture();
  SimOptions off;
  CHECK(off.prune_epsilon == 0.0);
  SimOptions on;
  on.prune_epsilon = 1e-9;
  on.prune_alpha = f.bd.alpha;
  TreeSimulator sim(f.spec, f.x0, 0.0, on, Rng(15, 0));
  for (int n = 0; n < 40 && sim.survived(); ++n) sim.step();
  CHECK(sim.prune_bias_bound() >= 0.0);
}

TEST_CASE("series determinism: same seed gives identical bytes") {
  const auto& f = fixture();
  SeriesRequest req;
  req.record_at = {5, 17, 33};
  req.s_values = {f.bd.alpha};
  req.want_D = true;
  req.want_W_tilde = true;
  auto run = [&] {
    return run_martingale_series(f.spec, f.x0, 0.0, req, {&f.bd.primal}, &f.bd, f.grid, {},
                                 Rng(123456, 7));
  };
  const auto a = run(), b = run();
  CHECK(a.W == b.W);
  CHECK(a.D == b.D);
  CHECK(a.W_tilde == b.W_tilde);
  CHECK(a.population == b.population);
}
