#include "mbrw/spine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mbrw/parallel.hpp"
#include "mbrw/stats.hpp"

namespace mbrw {

using nlohmann::json;

namespace {

struct AtomChildren {
  std::vector<Direction> X;
  std::vector<double> S;
  std::vector<double> H;      // H_alpha(child) * 1_B
  double H_total = 0.0;       // sum of q_j H_j
};

AtomChildren atom_children(const Direction& x, double b, const ModelSpec& spec,
                           const TiltedKernel& kernel, const HarmonicEvaluator& ev) {
  AtomChildren out;
  const auto scaled = spec.scaled_atoms();
  const auto& sd = kernel.data();
  for (size_t j = 0; j < scaled.size(); ++j) {
    const double sigma = cocycle(scaled[j], x);
    const Direction y = act(scaled[j], x);
    const double s_child = b - sigma;
    out.X.push_back(y);
    out.S.push_back(s_child);
    const double Hj = ev.H(y, s_child, sd, kernel.grid());
    out.H.push_back(Hj);
    out.H_total += spec.atoms[j].second * Hj;
  }
  return out;
}

std::vector<double> atom_cdf(const ModelSpec& spec) {
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& [mat, w] : spec.atoms) {
    acc += w;
    cdf.push_back(acc);
  }
  cdf.back() = 1.0;
  return cdf;
}

}  // namespace

BiasedGeneration sample_biased_generation(const Direction& x, double b, const ModelSpec& spec,
                                          const TiltedKernel& kernel, const HarmonicEvaluator& ev,
                                          Rng& rng, bool exact_sampler) {
  if (!ev.in_B(b)) {
    throw ConfigError("sample_biased_generation: root position outside B");
  }
  const auto& sd = kernel.data();
  const double Hxb = ev.H(x, b, sd, kernel.grid());
  if (!(Hxb > 0.0)) throw MathError("sample_biased_generation: H(x,b) = 0");
  const AtomChildren ac = atom_children(x, b, spec, kernel, ev);
  const int na = spec.atom_count();
  const auto cdf = atom_cdf(spec);

  BiasedGeneration out;
  if (exact_sampler) {
    if (!(ac.H_total > 0.0)) {
      throw MathError("sample_biased_generation: no accessible child (total H-mass 0)");
    }
    // Size-biased child count.
    int n = 0;
    switch (spec.offspring.kind()) {
      case OffspringLaw::Kind::deterministic: {
        n = static_cast<int>(spec.offspring.mean() + 0.5);
        if (n == 0) throw MathError("size-biased count undefined for N = 0");
        break;
      }
      case OffspringLaw::Kind::poisson: {
        n = 1 + rng.poisson(spec.offspring.mean());
        break;
      }
      case OffspringLaw::Kind::finite_support: {
        const auto pmf = spec.offspring.pmf();
        double total = 0.0;
        for (const auto& [k, p] : pmf) total += k * p;
        if (!(total > 0.0)) throw MathError("size-biased count undefined for N = 0");
        const double u = rng.uniform01() * total;
        double acc = 0.0;
        n = pmf.back().first;
        for (const auto& [k, p] : pmf) {
          acc += k * p;
          if (u < acc) {
            n = k;
            break;
          }
        }
        break;
      }
    }
    // One H-biased child, the rest unbiased, spine slot uniform.
    const int spine_slot = static_cast<int>(rng.uniform01() * n);
    const double u = rng.uniform01() * ac.H_total;
    int jstar = na - 1;
    double acc = 0.0;
    for (int j = 0; j < na; ++j) {
      acc += spec.atoms[j].second * ac.H[j];
      if (u < acc) {
        jstar = j;
        break;
      }
    }
    for (int c = 0; c < n; ++c) {
      const int j = (c == spine_slot) ? jstar : rng.discrete_cdf(cdf.data(), na);
      out.X.push_back(ac.X[j]);
      out.S.push_back(ac.S[j]);
      out.atom_index.push_back(j);
    }
    out.spine = std::min(spine_slot, n - 1);
    return out;
  }

  // Rejection sampler: propose from the original law, accept with probability
  // (sum_c H(child_c) 1_B) / (N_max max_j H_j).
  if (spec.offspring.kind() == OffspringLaw::Kind::poisson) {
    throw MathError("rejection bound M infinite: unbounded N without tail control");
  }
  const auto pmf = spec.offspring.pmf();
  const int n_max = pmf.back().first;
  const double h_max = *std::max_element(ac.H.begin(), ac.H.end());
  const double bound = n_max * h_max;
  if (!(bound > 0.0)) {
    throw MathError("sample_biased_generation: no accessible child (rejection bound 0)");
  }
  std::vector<int> proposal;
  for (uint64_t attempt = 0; attempt < 1'000'000; ++attempt) {
    const int n = spec.offspring.sample(rng);
    proposal.clear();
    double total_h = 0.0;
    for (int c = 0; c < n; ++c) {
      const int j = rng.discrete_cdf(cdf.data(), na);
      proposal.push_back(j);
      total_h += ac.H[j];
    }
    if (rng.uniform01() * bound >= total_h) continue;
    // Accepted; pick the spine proportionally to H * 1_B.
    const double u = rng.uniform01() * total_h;
    double acc = 0.0;
    int spine = -1;
    for (int c = 0; c < n; ++c) {
      acc += ac.H[proposal[c]];
      if (u < acc) {
        spine = c;
        break;
      }
    }
    if (spine < 0) continue;
    for (int c = 0; c < n; ++c) {
      out.X.push_back(ac.X[proposal[c]]);
      out.S.push_back(ac.S[proposal[c]]);
      out.atom_index.push_back(proposal[c]);
    }
    out.spine = spine;
    return out;
  }
  throw MathError("sample_biased_generation: rejection sampler exhausted the draw limit");
}

std::string SpinePath::to_jsonl() const {
  std::ostringstream os;
  {
    json j{{"n", 0}, {"X", std::vector<double>(x0.coords().begin(), x0.coords().end())},
           {"S", b0}};
    os << j.dump() << "\n";
  }
  for (size_t k = 0; k < steps.size(); ++k) {
    const auto& st = steps[k];
    json sibs = json::array();
    for (size_t i = 0; i < st.sib_X.size(); ++i) {
      sibs.push_back(json{
          {"X", std::vector<double>(st.sib_X[i].coords().begin(), st.sib_X[i].coords().end())},
          {"S", st.sib_S[i]}});
    }
    json j{{"n", k + 1},
           {"spine_child", st.spine_child},
           {"n_children", st.n_children},
           {"X", std::vector<double>(st.X.coords().begin(), st.X.coords().end())},
           {"S", st.S},
           {"brothers", sibs}};
    os << j.dump() << "\n";
  }
  return os.str();
}

SpineSimResult simulate_with_spine(const Direction& x0, double b0, const ModelSpec& spec,
                                   const TiltedKernel& kernel, const HarmonicEvaluator& ev,
                                   int depth, Rng& rng, bool emit_tree, uint64_t particle_cap) {
  if (depth < 1) throw ConfigError("simulate_with_spine: depth must be >= 1");
  SpineSimResult out;
  out.path.x0 = x0;
  out.path.b0 = b0;
  if (emit_tree) {
    out.snapshots.resize(depth + 1);
    for (int g = 0; g <= depth; ++g) out.snapshots[g].n = g;
    ParticleRecord root;
    root.X = x0;
    root.S = b0;
    root.min_S_prefix = b0;
    out.snapshots[0].particles.push_back(root);
    out.snapshots[0].survived = true;
  }

  Direction sx = x0;
  double sS = b0;
  double s_minpref = b0;
  for (int k = 1; k <= depth; ++k) {
    BiasedGeneration fam = sample_biased_generation(sx, sS, spec, kernel, ev, rng);
    SpineStep step;
    step.n_children = static_cast<int>(fam.X.size());
    step.spine_child = fam.spine;
    step.X = fam.X[fam.spine];
    step.S = fam.S[fam.spine];
    for (int c = 0; c < step.n_children; ++c) {
      if (c == fam.spine) continue;
      step.sib_X.push_back(fam.X[c]);
      step.sib_S.push_back(fam.S[c]);
    }
    if (emit_tree) {
      const double spine_minpref = std::min(s_minpref, step.S);
      for (int c = 0; c < step.n_children; ++c) {
        ParticleRecord p;
        p.X = fam.X[c];
        p.S = fam.S[c];
        p.min_S_prefix = std::min(s_minpref, p.S);
        p.child_index = static_cast<uint32_t>(c);
        out.snapshots[k].particles.push_back(p);
        if (out.snapshots[k].particles.size() > particle_cap) {
          throw MathError("population cap exceeded at generation " + std::to_string(k));
        }
      }
      // Brothers root independent unbiased subtrees.
      for (int c = 0; c < step.n_children && k < depth; ++c) {
        if (c == fam.spine) continue;
        SimOptions opts;
        opts.particle_cap = particle_cap;
        TreeSimulator sub(spec, fam.X[c], fam.S[c], opts, Rng(rng.next_u64(), 0x5b5));
        for (int g = 1; g <= depth - k; ++g) {
          if (!sub.step()) break;
          auto& bucket = out.snapshots[k + g].particles;
          for (const auto& q : sub.current().particles) {
            ParticleRecord p = q;
            // Prefix minima of subtree particles extend the brother's prefix,
            // which already includes the spine ancestry via min_S_prefix of
            // the brother (set at birth above).
            p.min_S_prefix = std::min(p.min_S_prefix, std::min(s_minpref, fam.S[c]));
            bucket.push_back(p);
            if (bucket.size() > particle_cap) {
              throw MathError("population cap exceeded at generation " + std::to_string(k + g));
            }
          }
        }
      }
      s_minpref = spine_minpref;
    } else {
      s_minpref = std::min(s_minpref, step.S);
    }
    sx = step.X;
    sS = step.S;
    out.path.steps.push_back(std::move(step));
  }
  if (emit_tree) {
    for (auto& snap : out.snapshots) snap.survived = !snap.particles.empty();
  }
  return out;
}

namespace {

std::vector<std::pair<std::vector<Direction>, std::vector<double>>> particle_paths(
    const std::vector<GenerationSnapshot>& snaps, int n) {
  std::vector<std::pair<std::vector<Direction>, std::vector<double>>> out;
  const auto& last = snaps.at(n).particles;
  for (size_t idx = 0; idx < last.size(); ++idx) {
    std::vector<Direction> xs(n + 1);
    std::vector<double> ss(n + 1);
    size_t cur = idx;
    for (int g = n; g >= 0; --g) {
      const auto& p = snaps[g].particles[cur];
      xs[g] = p.X;
      ss[g] = p.S;
      cur = p.parent;
    }
    out.emplace_back(std::move(xs), std::move(ss));
  }
  return out;
}

}  // namespace

VerifyReport verify_many_to_one(const ModelSpec& spec, const TiltedKernel& kernel,
                                const Direction& x, double b, int n,
                                const std::vector<std::pair<std::string, PathFunctional>>& fs,
                                uint64_t replicas, uint64_t master_seed, int threads) {
  if (n > 8) throw ConfigError("verify_many_to_one: n must be <= 8 (population control)");
  const size_t nf = fs.size();
  const auto& sd = kernel.data();
  const DirectionGrid& grid = kernel.grid();
  const double rx = grid.interp(sd.r, x);
  const double s = sd.s;
  const double mn = std::pow(sd.m_s, n);

  // LHS: plain branching, sum over generation-n particles.
  std::vector<double> lhs_vals(replicas * nf);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    SimOptions opts;
    TreeSimulator sim(spec, x, b, opts, rng);
    std::vector<GenerationSnapshot> snaps;
    snaps.push_back(sim.current());
    bool alive = true;
    for (int g = 1; g <= n && alive; ++g) {
      alive = sim.step();
      snaps.push_back(sim.current());
    }
    std::vector<double> sums(nf, 0.0);
    if (alive) {
      for (const auto& [xs, ss] : particle_paths(snaps, n)) {
        for (size_t fi = 0; fi < nf; ++fi) sums[fi] += fs[fi].second(xs, ss);
      }
    }
    for (size_t fi = 0; fi < nf; ++fi) lhs_vals[rep * nf + fi] = sums[fi];
  });

  // RHS: tilted chain with the many-to-one weight.
  std::vector<double> rhs_vals(replicas * nf);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed ^ 0x9e3779b97f4a7c15ULL, rep);
    std::vector<Direction> xs(n + 1);
    std::vector<double> ss(n + 1);
    Direction cx = x;
    double cS = b;
    xs[0] = cx;
    ss[0] = cS;
    for (int g = 1; g <= n; ++g) {
      kernel.step(cx, cS, rng);
      xs[g] = cx;
      ss[g] = cS;
    }
    const double weight = rx * mn * std::exp(s * (cS - b)) / grid.interp(sd.r, cx);
    for (size_t fi = 0; fi < nf; ++fi) {
      rhs_vals[rep * nf + fi] = weight * fs[fi].second(xs, ss);
    }
  });

  VerifyReport report;
  report.name = "many_to_one(n=" + std::to_string(n) + ")";
  for (size_t fi = 0; fi < nf; ++fi) {
    RunningStat ls, rs;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      ls.add(lhs_vals[rep * nf + fi]);
      rs.add(rhs_vals[rep * nf + fi]);
    }
    CheckLine line;
    line.statistic = fs[fi].first;
    line.lhs = ls.mean();
    line.lhs_se = ls.se();
    line.rhs = rs.mean();
    line.rhs_se = rs.se();
    line.pass = within_se(line.lhs, line.lhs_se, line.rhs, line.rhs_se, 3.0);
    report.lines.push_back(std::move(line));
  }
  return report;
}

double many_to_one_exact1(const ModelSpec& spec, const TiltedKernel& kernel, const Direction& x,
                          double b, const std::vector<PathFunctional>& fs) {
  const auto& sd = kernel.data();
  const DirectionGrid& grid = kernel.grid();
  const auto scaled = spec.scaled_atoms();
  const double en = spec.offspring.mean();
  const double rx = grid.interp(sd.r, x);
  double worst = 0.0;
  for (const auto& f : fs) {
    double lhs = 0.0, rhs = 0.0;
    for (size_t j = 0; j < scaled.size(); ++j) {
      const double sigma = cocycle(scaled[j], x);
      const Direction y = act(scaled[j], x);
      const std::vector<Direction> xs{x, y};
      const std::vector<double> ss{b, b - sigma};
      const double fval = f(xs, ss);
      lhs += en * spec.atoms[j].second * fval;
      const double w = en * spec.atoms[j].second * std::exp(sd.s * sigma) *
                       grid.interp(sd.r, y) / (sd.m_s * rx);
      rhs += w * rx * sd.m_s * std::exp(sd.s * (-sigma)) / grid.interp(sd.r, y) * fval;
    }
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

VerifyReport verify_spinal_measure(const ModelSpec& spec, const TiltedKernel& kernel,
                                   const HarmonicEvaluator& ev, const Direction& x, double b,
                                   int n, uint64_t replicas, uint64_t master_seed, int threads) {
  if (n > 6) throw ConfigError("verify_spinal_measure: n must be <= 6");
  const auto& sd = kernel.data();
  const DirectionGrid& grid = kernel.grid();
  const double alpha = sd.s;
  const double Hxb = ev.H(x, b, sd, grid);

  // Battery of bounded tree statistics evaluated at generation n.
  using Stat = std::function<double(const std::vector<GenerationSnapshot>&)>;
  std::vector<std::pair<std::string, Stat>> stats;
  stats.emplace_back("one", [](const auto&) { return 1.0; });
  stats.emplace_back("population", [n](const auto& s) {
    return static_cast<double>(s.at(n).particles.size());
  });
  stats.emplace_back("sum_exp_alpha_S", [n, alpha](const auto& s) {
    double acc = 0.0;
    for (const auto& p : s.at(n).particles) acc += std::exp(-alpha * p.S);
    return acc;
  });
  stats.emplace_back("min_S", [n](const auto& s) {
    double m = 0.0;
    bool first = true;
    for (const auto& p : s.at(n).particles) {
      m = first ? p.S : std::min(m, p.S);
      first = false;
    }
    return m;
  });
  stats.emplace_back("max_S", [n](const auto& s) {
    double m = 0.0;
    bool first = true;
    for (const auto& p : s.at(n).particles) {
      m = first ? p.S : std::max(m, p.S);
      first = false;
    }
    return m;
  });
  stats.emplace_back("sum_Splus_exp_alpha_S", [n, alpha](const auto& s) {
    double acc = 0.0;
    for (const auto& p : s.at(n).particles) acc += std::max(p.S, 0.0) * std::exp(-alpha * p.S);
    return acc;
  });
  stats.emplace_back("count_above_root", [n, b](const auto& s) {
    double acc = 0.0;
    for (const auto& p : s.at(n).particles) acc += (p.S >= b) ? 1.0 : 0.0;
    return acc;
  });
  stats.emplace_back("first_generation_size", [](const auto& s) {
    return static_cast<double>(s.at(1).particles.size());
  });
  const size_t nf = stats.size();

  // LHS: spinal sampler.
  std::vector<double> lhs_vals(replicas * nf);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    const auto sim = simulate_with_spine(x, b, spec, kernel, ev, n, rng, true);
    for (size_t fi = 0; fi < nf; ++fi) lhs_vals[rep * nf + fi] = stats[fi].second(sim.snapshots);
  });

  // RHS: plain simulation reweighted by M_n^h / H(x, b).
  std::vector<double> rhs_vals(replicas * nf);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed ^ 0x6a09e667f3bcc909ULL, rep);
    SimOptions opts;
    TreeSimulator sim(spec, x, b, opts, rng);
    std::vector<GenerationSnapshot> snaps;
    snaps.push_back(sim.current());
    bool alive = true;
    for (int g = 1; g <= n && alive; ++g) {
      alive = sim.step();
      snaps.push_back(sim.current());
    }
    while (static_cast<int>(snaps.size()) <= n) {
      GenerationSnapshot empty;
      empty.n = static_cast<int>(snaps.size());
      snaps.push_back(empty);
    }
    const double weight = h_martingale(snaps[n], ev, sd, grid) / Hxb;
    for (size_t fi = 0; fi < nf; ++fi) {
      rhs_vals[rep * nf + fi] = (weight > 0.0) ? weight * stats[fi].second(snaps) : 0.0;
    }
  });

  VerifyReport report;
  report.name = "spinal_measure(n=" + std::to_string(n) + ")";
  for (size_t fi = 0; fi < nf; ++fi) {
    RunningStat ls, rs;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      ls.add(lhs_vals[rep * nf + fi]);
      rs.add(rhs_vals[rep * nf + fi]);
    }
    CheckLine line;
    line.statistic = stats[fi].first;
    line.lhs = ls.mean();
    line.lhs_se = ls.se();
    line.rhs = rs.mean();
    line.rhs_se = rs.se();
    line.pass = within_se(line.lhs, line.lhs_se, line.rhs, line.rhs_se, 3.0);
    report.lines.push_back(std::move(line));
  }
  return report;
}

}  // namespace mbrw

namespace mbrw {

VerifyReport verify_exchangeability(const ModelSpec& spec, int n,
                                    const std::vector<std::pair<std::string, FactorFunctional>>& fs,
                                    uint64_t replicas, uint64_t master_seed, int threads) {
  if (n < 1 || n > 4) throw ConfigError("verify_exchangeability: n must be in [1, 4]");
  spec.validate();
  const auto scaled = spec.scaled_atoms();
  const int na = spec.atom_count();
  const double en = spec.offspring.mean();
  const size_t nf = fs.size();

  // Exact mu^{(x)n} sum: (E N)^n sum over atom tuples of prod q_j f(tuple).
  std::vector<double> exact(nf, 0.0);
  {
    std::vector<int> tuple(n, 0);
    std::vector<const PosMatrix*> mats(n);
    const double mass = std::pow(en, n);
    for (;;) {
      double q = 1.0;
      for (int k = 0; k < n; ++k) {
        q *= spec.atoms[tuple[k]].second;
        mats[k] = &scaled[tuple[k]];
      }
      for (size_t fi = 0; fi < nf; ++fi) exact[fi] += mass * q * fs[fi].second(mats);
      int pos = n - 1;
      while (pos >= 0 && ++tuple[pos] == na) tuple[pos--] = 0;
      if (pos < 0) break;
    }
  }

  // MC with the genuine branching tree, forward and reversed factor order.
  std::vector<double> fwd(replicas * nf, 0.0), rev(replicas * nf, 0.0);
  auto cdf = [&] {
    std::vector<double> c;
    double acc = 0.0;
    for (const auto& [mat, w] : spec.atoms) {
      acc += w;
      c.push_back(acc);
    }
    c.back() = 1.0;
    return c;
  }();
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    // Particles are factor-index paths.
    std::vector<std::vector<int>> paths{{}};
    for (int gen = 0; gen < n; ++gen) {
      std::vector<std::vector<int>> next;
      for (const auto& p : paths) {
        const int kids = spec.offspring.sample(rng);
        for (int c = 0; c < kids; ++c) {
          auto q = p;
          q.push_back(rng.discrete_cdf(cdf.data(), na));
          next.push_back(std::move(q));
        }
      }
      paths = std::move(next);
      if (paths.size() > 1'000'000) throw MathError("verify_exchangeability: population blow-up");
    }
    std::vector<const PosMatrix*> mats(n);
    for (const auto& p : paths) {
      for (int k = 0; k < n; ++k) mats[k] = &scaled[p[k]];
      for (size_t fi = 0; fi < nf; ++fi) fwd[rep * nf + fi] += fs[fi].second(mats);
      for (int k = 0; k < n; ++k) mats[k] = &scaled[p[n - 1 - k]];
      for (size_t fi = 0; fi < nf; ++fi) rev[rep * nf + fi] += fs[fi].second(mats);
    }
  });

  VerifyReport report;
  report.name = "exchangeability(n=" + std::to_string(n) + ")";
  for (size_t fi = 0; fi < nf; ++fi) {
    RunningStat sf, sr;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      sf.add(fwd[rep * nf + fi]);
      sr.add(rev[rep * nf + fi]);
    }
    CheckLine fwd_line;
    fwd_line.statistic = fs[fi].first + " forward vs exact";
    fwd_line.lhs = sf.mean();
    fwd_line.lhs_se = sf.se();
    fwd_line.rhs = exact[fi];
    fwd_line.pass = within_se(sf.mean(), sf.se(), exact[fi], 0.0, 3.0);
    report.lines.push_back(fwd_line);
    CheckLine rev_line;
    rev_line.statistic = fs[fi].first + " reversed vs exact";
    rev_line.lhs = sr.mean();
    rev_line.lhs_se = sr.se();
    rev_line.rhs = exact[fi];
    rev_line.pass = within_se(sr.mean(), sr.se(), exact[fi], 0.0, 3.0);
    report.lines.push_back(rev_line);
    CheckLine both_line;
    both_line.statistic = fs[fi].first + " forward vs reversed";
    both_line.lhs = sf.mean();
    both_line.lhs_se = sf.se();
    both_line.rhs = sr.mean();
    both_line.rhs_se = sr.se();
    both_line.pass = within_se(sf.mean(), sf.se(), sr.mean(), sr.se(), 3.0);
    report.lines.push_back(both_line);
  }
  return report;
}

}  // namespace mbrw
