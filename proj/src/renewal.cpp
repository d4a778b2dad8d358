#include "mbrw/renewal.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mbrw/parallel.hpp"

namespace mbrw {

using nlohmann::json;

WalkPath walk(const TiltedKernel& kernel, const Direction& x0, double b0, int steps, Rng& rng) {
  WalkPath path;
  path.measure = kernel.data().dual ? WalkMeasure::dual : WalkMeasure::primal;
  path.X.reserve(steps + 1);
  path.S.reserve(steps + 1);
  Direction x = x0;
  double S = b0;
  path.X.push_back(x);
  path.S.push_back(S);
  for (int i = 0; i < steps; ++i) {
    kernel.step(x, S, rng);
    path.X.push_back(x);
    path.S.push_back(S);
  }
  return path;
}

int StoppingTimes::tau_minus(std::span<const double> S, double y) {
  for (size_t k = 1; k < S.size(); ++k) {
    if (y + S[k] < 0.0) return static_cast<int>(k);
  }
  return -1;
}

int StoppingTimes::tau_plus(std::span<const double> S, double y) {
  for (size_t k = 1; k < S.size(); ++k) {
    if (S[k] - y > 0.0) return static_cast<int>(k);
  }
  return -1;
}

std::vector<int> StoppingTimes::weak_ascending(std::span<const double> S) {
  std::vector<int> out;
  double level = S.empty() ? 0.0 : S[0];
  for (size_t k = 1; k < S.size(); ++k) {
    if (S[k] >= level) {
      out.push_back(static_cast<int>(k));
      level = S[k];
    }
  }
  return out;
}

std::vector<int> StoppingTimes::weak_descending(std::span<const double> S) {
  std::vector<int> out;
  double level = S.empty() ? 0.0 : S[0];
  for (size_t k = 1; k < S.size(); ++k) {
    if (S[k] <= level) {
      out.push_back(static_cast<int>(k));
      level = S[k];
    }
  }
  return out;
}

std::vector<double> StoppingTimes::running_min(std::span<const double> S) {
  std::vector<double> out(S.size());
  double m = S.empty() ? 0.0 : S[0];
  for (size_t k = 0; k < S.size(); ++k) {
    m = std::min(m, S[k]);
    out[k] = m;
  }
  return out;
}

ReversedBoundReport reversed_bound_check(const ModelSpec& spec, const TiltedKernel& kernel, int n,
                                         uint64_t replicas, uint64_t master_seed, int threads) {
  const auto fk = fk_constants(spec.raw_atoms(), spec.d);
  const double bound = fk.kappa_bar + std::log(static_cast<double>(spec.d));
  const auto scaled = spec.scaled_atoms();
  std::vector<PosMatrix> transposed;
  for (const auto& g : scaled) transposed.push_back(g.transpose());
  const int d = spec.d;

  std::vector<double> gaps(replicas, 0.0);
  std::vector<uint64_t> violations(replicas, 0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = random_direction(d, rng);
    double S = 0.0;
    std::vector<int> factors(n);
    std::vector<double> S_path(n + 1);
    S_path[0] = 0.0;
    for (int k = 1; k <= n; ++k) {
      factors[k - 1] = kernel.step_indexed(x, S, rng);
      S_path[k] = S;
    }
    // Reversed process from the same factors: h_{n,j} = g_{n-j+1}^*.
    Direction xs = random_direction(d, rng);
    double Ss = 0.0;
    double worst = 0.0;
    uint64_t bad = 0;
    // j = n - k, so S*_{n, n-k} pairs with S_n - S_k; j = 0 gives both sides 0.
    for (int j = 1; j <= n; ++j) {
      const PosMatrix& h = transposed[factors[n - j]];
      Ss -= cocycle(h, xs);
      xs = act(h, xs);
      const int k = n - j;
      const double gap = std::abs((S_path[n] - S_path[k]) - Ss);
      worst = std::max(worst, gap);
      if (gap > bound + 1e-9) ++bad;
    }
    gaps[rep] = worst;
    violations[rep] = bad;
  });

  ReversedBoundReport report;
  report.bound = bound;
  report.paths = replicas;
  for (uint64_t rep = 0; rep < replicas; ++rep) {
    report.max_gap = std::max(report.max_gap, gaps[rep]);
    report.violations += violations[rep];
  }
  return report;
}

double VAlphaTable::eval(const Direction& x, double y) const {
  if (y < 0.0) return 0.0;
  const size_t ny = y_grid.size();
  const auto st = xgrid.locate(x);
  auto value_at = [&](size_t yi) {
    double acc = 0.0;
    for (int k = 0; k < st.count; ++k) acc += st.w[k] * values[st.idx[k] * ny + yi];
    return acc;
  };
  const double ymax = y_grid.back();
  if (y >= ymax) {
    // Linear extension with the asymptotic unit slope V(x, y)/y -> 1.
    return value_at(ny - 1) + (y - ymax);
  }
  const double step = y_grid[1] - y_grid[0];
  const double pos = y / step;
  const size_t lo = std::min(static_cast<size_t>(pos), ny - 2);
  const double frac = pos - static_cast<double>(lo);
  return value_at(lo) * (1.0 - frac) + value_at(lo + 1) * frac;
}

VAlphaTable estimate_V(const TiltedKernel& kernel, const VEstimateOptions& opts,
                       uint64_t master_seed, int threads) {
  VAlphaTable tab;
  tab.xgrid = DirectionGrid::make(kernel.dim(), opts.coarse_x);
  for (double y = 0.0; y <= opts.y_max + 1e-9; y += opts.y_step) tab.y_grid.push_back(y);
  const size_t ny = tab.y_grid.size();
  const size_t nx = static_cast<size_t>(tab.xgrid.size());
  const int n_max = opts.n_schedule.back();
  const size_t nsched = opts.n_schedule.size();

  tab.values.assign(nx * ny, 0.0);
  double worst_gap = 0.0, worst_se = 0.0;

  for (size_t xi = 0; xi < nx; ++xi) {
    const Direction x0 = tab.xgrid.node(xi);
    // Per-replica records of (S_n, running min) at the schedule points.
    std::vector<double> endS(opts.replicas * nsched);
    std::vector<double> endMin(opts.replicas * nsched);
    parallel_for(opts.replicas, threads, [&](uint64_t rep) {
      Rng rng(master_seed ^ (0x9e37 * (xi + 1)), rep);
      Direction x = x0;
      double S = 0.0, rmin = 1e300;
      size_t si = 0;
      for (int k = 1; k <= n_max; ++k) {
        kernel.step(x, S, rng);
        rmin = std::min(rmin, S);
        if (si < nsched && k == opts.n_schedule[si]) {
          endS[rep * nsched + si] = S;
          endMin[rep * nsched + si] = rmin;
          ++si;
        }
        if (rmin < -opts.y_max) {
          for (; si < nsched; ++si) {
            endS[rep * nsched + si] = S;
            endMin[rep * nsched + si] = rmin;
          }
          break;
        }
      }
    });
    for (size_t yi = 0; yi < ny; ++yi) {
      const double y = tab.y_grid[yi];
      std::vector<RunningStat> est(nsched);
      for (uint64_t rep = 0; rep < opts.replicas; ++rep) {
        for (size_t si = 0; si < nsched; ++si) {
          const bool alive = endMin[rep * nsched + si] >= -y;
          est[si].add(alive ? (y + endS[rep * nsched + si]) : 0.0);
        }
      }
      // Plateau: the last two schedule estimates within 2 combined SE.
      const double gap = std::abs(est[nsched - 1].mean() - est[nsched - 2].mean());
      const double se_pair = std::hypot(est[nsched - 2].se(), est[nsched - 1].se());
      const bool plateaued = gap <= 2.0 * se_pair;
      if (!plateaued) {
        throw MathError("V estimate not converged at y = " + std::to_string(y) +
                        " (last gap " + std::to_string(gap) + ")");
      }
      tab.values[xi * ny + yi] = est[nsched - 1].mean();
      worst_gap = std::max(worst_gap, gap);
      worst_se = std::max(worst_se, est[nsched - 1].se());
    }
  }
  tab.stat_error = worst_gap + 2.0 * worst_se;

  // Harmonicity post-check by one exact kernel step over the atoms.
  double resid = 0.0;
  const int na = kernel.atom_count();
  std::vector<double> w(na), inc(na);
  std::vector<Direction> next(na);
  for (size_t xi = 0; xi < nx; ++xi) {
    const Direction& x = tab.xgrid.node(xi);
    kernel.weights_at(x, w.data(), inc.data(), next.data());
    for (size_t yi = 0; yi < ny; ++yi) {
      const double y = tab.y_grid[yi];
      double one_step = 0.0;
      for (int j = 0; j < na; ++j) {
        const double ynext = y + inc[j];
        if (ynext >= 0.0) one_step += w[j] * tab.eval(next[j], ynext);
      }
      resid = std::max(resid, std::abs(one_step - tab.values[xi * ny + yi]));
    }
  }
  tab.harmonicity_residual = resid;
  tab.certified_error = std::max(tab.stat_error, resid);

  tab.c_low = 1e300;
  tab.c_high = 0.0;
  for (size_t xi = 0; xi < nx; ++xi) {
    for (size_t yi = 0; yi < ny; ++yi) {
      const double ratio = tab.values[xi * ny + yi] / (1.0 + tab.y_grid[yi]);
      tab.c_low = std::min(tab.c_low, ratio);
      tab.c_high = std::max(tab.c_high, ratio);
    }
  }
  if (!(tab.c_low > 0.0)) throw MathError("estimate_V: table not strictly positive");
  return tab;
}

HarmonicEvaluator make_V_evaluator(const VAlphaTable& table, double beta) {
  HarmonicEvaluator ev;
  ev.kind = HarmonicEvaluator::Kind::V_alpha_beta;
  ev.beta = beta;
  ev.B_lower = -beta;
  ev.h_fn = [&table, beta](const Direction& x, double s) { return table.eval(x, s + beta); };
  return ev;
}

namespace {

struct OccupancyResult {
  std::vector<RunningStat> bins;       // window occupancy per replica-mean
  std::vector<RunningStat> last_block; // occupancy in the trailing horizon block (tail estimate)
};

// Ladder heights of the weakly ascending process until the height exceeds
// `stop_above` or the horizon is hit.
void ladder_occupancy(const TiltedKernel& kernel, const Direction& x0, int horizon,
                      double bin_lo, int nbins, double stop_above, uint64_t replicas,
                      uint64_t master_seed, int threads, std::vector<double>& out_counts,
                      std::vector<double>& out_tail) {
  out_counts.assign(replicas * nbins, 0.0);
  out_tail.assign(replicas, 0.0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = x0;
    double S = 0.0;
    double level = 0.0;  // S_0 = 0 is the T_0 = 0 ladder point
    auto record = [&](double height, int n) {
      const int bin = static_cast<int>(std::floor(height - bin_lo));
      if (bin >= 0 && bin < nbins) out_counts[rep * nbins + bin] += 1.0;
      if (n > horizon * 3 / 4) out_tail[rep] += 1.0;
    };
    record(0.0, 0);
    for (int n = 1; n <= horizon; ++n) {
      kernel.step(x, S, rng);
      if (S >= level) {
        level = S;
        record(S, n);
        if (S > stop_above) break;
      }
    }
  });
}

void killed_occupancy(const TiltedKernel& kernel, const Direction& x0, double y, int horizon,
                      double bin_lo, int nbins, uint64_t replicas, uint64_t master_seed,
                      int threads, std::vector<double>& out_counts, std::vector<double>& out_tail) {
  out_counts.assign(replicas * nbins, 0.0);
  out_tail.assign(replicas, 0.0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = x0;
    double S = 0.0;
    auto record = [&](double s, int n) {
      const int bin = static_cast<int>(std::floor(s - bin_lo));
      if (bin >= 0 && bin < nbins) out_counts[rep * nbins + bin] += 1.0;
      if (n > horizon * 3 / 4) out_tail[rep] += 1.0;
    };
    record(0.0, 0);  // n = 0 term
    for (int n = 1; n <= horizon; ++n) {
      kernel.step(x, S, rng);
      if (y + S < 0.0) break;  // tau_y^-
      record(S, n);
    }
  });
}

}  // namespace

RenewalScan renewal_scan(const TiltedKernel& kernel, const Direction& x0, RenewalVariant variant,
                         double y, double t_min, double t_max, const RenewalOptions& opts,
                         uint64_t master_seed, int threads) {
  const int nbins = static_cast<int>(std::ceil(t_max - t_min));
  std::vector<double> counts, tails;
  if (variant == RenewalVariant::killed_primal) {
    killed_occupancy(kernel, x0, y, opts.horizon, t_min, nbins, opts.replicas, master_seed,
                     threads, counts, tails);
  } else {
    ladder_occupancy(kernel, x0, opts.horizon, t_min, nbins, t_max + 1.0, opts.replicas,
                     master_seed, threads, counts, tails);
  }
  RenewalScan scan;
  scan.t_min = t_min;
  std::vector<RunningStat> stats(nbins);
  RunningStat tail_stat;
  for (uint64_t rep = 0; rep < opts.replicas; ++rep) {
    for (int b = 0; b < nbins; ++b) stats[b].add(counts[rep * nbins + b]);
    tail_stat.add(tails[rep]);
  }
  // Visits in the trailing quarter of the horizon estimate the n^{-3/2} tail:
  // sum_{n > H} q(n) ~ 2 H q(H) with q(H) the per-step window probability.
  const double per_step_tail = tail_stat.mean() / (opts.horizon / 4.0);
  const double tail_bound = 2.0 * opts.horizon * per_step_tail;
  for (int b = 0; b < nbins; ++b) {
    scan.estimates.push_back(stats[b].mean());
    scan.ses.push_back(stats[b].se());
    scan.tail_bounds.push_back(tail_bound);
  }
  return scan;
}

RenewalEstimate renewal_measure(const TiltedKernel& primal, const TiltedKernel& dual,
                                const Direction& x0, RenewalVariant variant, double t, double a,
                                const RenewalOptions& opts, uint64_t master_seed, int threads) {
  RenewalEstimate out;
  out.window_lo = t;
  out.window_hi = t + a;
  const TiltedKernel& kernel = (variant == RenewalVariant::ladder_dual_plus) ? dual : primal;
  std::vector<RunningStat> stat(1);
  RunningStat tail_stat;
  std::vector<double> counts(opts.replicas, 0.0), tails(opts.replicas, 0.0);
  parallel_for(opts.replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = x0;
    double S = 0.0;
    double level = 0.0;
    double acc = 0.0, tail = 0.0;
    auto record = [&](double s, int n) {
      if (s >= t && s <= t + a) {
        acc += 1.0;
        if (n > opts.horizon * 3 / 4) tail += 1.0;
      }
    };
    if (variant == RenewalVariant::killed_primal) {
      record(0.0, 0);
      for (int n = 1; n <= opts.horizon; ++n) {
        kernel.step(x, S, rng);
        if (opts.y + S < 0.0) break;
        record(S, n);
      }
    } else {
      record(0.0, 0);
      for (int n = 1; n <= opts.horizon; ++n) {
        kernel.step(x, S, rng);
        if (S >= level) {
          level = S;
          record(S, n);
          if (S > t + a) break;
        }
      }
    }
    counts[rep] = acc;
    tails[rep] = tail;
  });
  for (uint64_t rep = 0; rep < opts.replicas; ++rep) {
    stat[0].add(counts[rep]);
    tail_stat.add(tails[rep]);
  }
  out.estimate = stat[0].estimate(master_seed);
  const double per_step_tail = tail_stat.mean() / (opts.horizon / 4.0);
  out.tail_bound = 2.0 * opts.horizon * per_step_tail;
  switch (variant) {
    case RenewalVariant::killed_primal: out.variant = "killed_primal"; break;
    case RenewalVariant::ladder_dual_plus: out.variant = "ladder_dual_plus"; break;
    case RenewalVariant::ladder_primal_T: out.variant = "ladder_primal_T"; break;
  }
  if (out.estimate.value > 0.0 && out.tail_bound > 0.01 * out.estimate.value) {
    throw MathError("renewal horizon insufficient: tail bound " + std::to_string(out.tail_bound) +
                    " vs estimate " + std::to_string(out.estimate.value) + "; suggest horizon " +
                    std::to_string(opts.horizon * 4));
  }
  return out;
}

void check_green_profile(const std::function<double(double)>& f) {
  double prev = f(0.0);
  if (!(prev >= 0.0) || !std::isfinite(prev)) throw ConfigError("green profile: f(0) invalid");
  double moment = 0.0;
  const double dy = 0.01;
  for (double y = dy; y <= 200.0; y += dy) {
    const double v = f(y);
    if (!(v >= 0.0)) throw ConfigError("green profile: f must be nonnegative");
    if (v > prev + 1e-12) throw ConfigError("green profile: f must be nonincreasing");
    moment += y * v * dy;
    prev = v;
  }
  if (!(moment < 1e6) || f(200.0) * 200.0 * 200.0 > 1.0) {
    throw ConfigError("green profile: integral of y f(y) looks divergent");
  }
}

std::vector<GreenPoint> green_functional(const TiltedKernel& kernel, const Direction& x0,
                                         const std::function<double(double)>& f,
                                         const std::vector<double>& b_list, int horizon,
                                         uint64_t replicas, uint64_t master_seed, int threads) {
  check_green_profile(f);
  std::vector<GreenPoint> out;
  for (double b : b_list) {
    std::vector<double> sums(replicas, 0.0), tails(replicas, 0.0);
    parallel_for(replicas, threads, [&](uint64_t rep) {
      Rng rng(master_seed ^ static_cast<uint64_t>(b * 1e6), rep);
      Direction x = x0;
      double S = 0.0;
      double acc = f(b) * b;  // n = 0 term: (b + S_0) f(b + S_0)
      double tail = 0.0;
      for (int n = 1; n <= horizon; ++n) {
        kernel.step(x, S, rng);
        if (b + S < 0.0) break;  // tau_b^-
        const double v = (b + S) * f(b + S);
        acc += v;
        if (n > horizon * 3 / 4) tail += v;
      }
      sums[rep] = acc;
      tails[rep] = tail;
    });
    RunningStat stat, tail_stat;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      stat.add(sums[rep]);
      tail_stat.add(tails[rep]);
    }
    GreenPoint pt;
    pt.b = b;
    pt.value = stat.mean() / b;
    pt.se = stat.se() / b;
    pt.tail_bound = 2.0 * horizon * (tail_stat.mean() / (horizon / 4.0)) / b;
    out.push_back(pt);
  }
  return out;
}

SpitzerReport spitzer_bound_check(const TiltedKernel& primal, const TiltedKernel& dual,
                                  const Direction& x0, const WindowFn& phi, const WindowFn& h,
                                  double c1, int horizon, uint64_t replicas, uint64_t master_seed,
                                  int threads) {
  if (phi.hi < phi.lo || h.hi < h.lo) throw ConfigError("spitzer: bad window supports");
  // Widened functions f~(x) = sup over |y - x| <= c1 of f(y); numeric sup.
  auto widen = [c1](const WindowFn& wf) {
    return [wf, c1](double x) {
      if (x < wf.lo - c1 || x > wf.hi + c1) return 0.0;
      double best = 0.0;
      const int grid = 33;
      for (int i = 0; i <= grid; ++i) {
        const double y = x - c1 + (2.0 * c1 * i) / grid;
        if (y >= wf.lo && y <= wf.hi) best = std::max(best, wf.fn(y));
      }
      return best;
    };
  };
  const auto phi_w = widen(phi);
  const auto h_w = widen(h);

  // LHS: sum_n E[phi(L_n) h(S_n - L_n)]; stops once L_n leaves phi's support.
  std::vector<double> lhs_vals(replicas, 0.0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = x0;
    double S = 0.0, L = 0.0;
    double acc = phi.fn(0.0) * h.fn(0.0);
    for (int n = 1; n <= horizon; ++n) {
      primal.step(x, S, rng);
      L = std::min(L, S);
      if (L < phi.lo) break;  // L is nonincreasing, no further contributions
      acc += phi.fn(L) * h.fn(S - L);
    }
    lhs_vals[rep] = acc;
  });

  // Dual factor: sum_n E*[phi~(S*_n); max_{1..n} S* <= c1].
  std::vector<double> dual_vals(replicas, 0.0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed ^ 0xd1ce, rep);
    Direction x = x0;
    double S = 0.0;
    double acc = phi_w(0.0);
    for (int n = 1; n <= horizon; ++n) {
      dual.step(x, S, rng);
      if (S - c1 > 0.0) break;  // tau*_{c1}
      acc += phi_w(S);
    }
    dual_vals[rep] = acc;
  });

  // Primal factor: sum_n E[h~(S_n); min_{1..n} S >= -c1].
  std::vector<double> primal_vals(replicas, 0.0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed ^ 0xfeed, rep);
    Direction x = x0;
    double S = 0.0;
    double acc = h_w(0.0);
    for (int n = 1; n <= horizon; ++n) {
      primal.step(x, S, rng);
      if (c1 + S < 0.0) break;  // tau_{c1}^-
      acc += h_w(S);
    }
    primal_vals[rep] = acc;
  });

  RunningStat ls, ds, ps;
  for (uint64_t rep = 0; rep < replicas; ++rep) {
    ls.add(lhs_vals[rep]);
    ds.add(dual_vals[rep]);
    ps.add(primal_vals[rep]);
  }
  SpitzerReport report;
  report.lhs = ls.mean();
  report.lhs_se = ls.se();
  report.factor_dual = ds.mean();
  report.factor_primal = ps.mean();
  const double rhs = report.factor_dual * report.factor_primal;
  report.ratio = (rhs > 0.0) ? report.lhs / rhs : std::numeric_limits<double>::infinity();
  return report;
}

ClltReport cllt_slope_check(const TiltedKernel& kernel, const VAlphaTable& vtab,
                            const Direction& x0, double y, double z, double b, double sigma2,
                            const std::vector<int>& n_list, uint64_t replicas,
                            uint64_t master_seed, int threads) {
  ClltReport report;
  report.n_list = n_list;
  const int n_max = n_list.back();
  const size_t np = n_list.size();
  const double kill = std::max(y, b);

  std::vector<uint8_t> window_hits(replicas * np, 0);
  std::vector<uint8_t> exit_hits(replicas * np, 0);
  parallel_for(replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed, rep);
    Direction x = x0;
    double S = 0.0, rmin = 1e300;
    size_t si = 0;
    for (int n = 1; n <= n_max && si < np; ++n) {
      kernel.step(x, S, rng);
      rmin = std::min(rmin, S);
      if (rmin < -kill) break;
      if (n == n_list[si]) {
        window_hits[rep * np + si] = (rmin >= -y && y + S <= z) ? 1 : 0;
        exit_hits[rep * np + si] = (rmin >= -b) ? 1 : 0;
        ++si;
      }
    }
  });

  std::vector<double> logn, logp;
  report.fitted_cprime = 0.0;
  for (size_t si = 0; si < np; ++si) {
    RunningStat ws, es;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      ws.add(window_hits[rep * np + si]);
      es.add(exit_hits[rep * np + si]);
    }
    report.window_prob.push_back(ws.mean());
    report.window_se.push_back(ws.se());
    report.exit_prob.push_back(es.mean());
    report.exit_se.push_back(es.se());
    const double n = n_list[si];
    report.fitted_cprime =
        std::max(report.fitted_cprime, std::sqrt(n) * es.mean() / (1.0 + std::max(b, 0.0)));
    if (ws.count() * ws.mean() < 50.0) {
      throw MathError("insufficient survivors at n = " + std::to_string(n_list[si]) +
                      " (window hits " + std::to_string(ws.count() * ws.mean()) +
                      "); rerun with more replicas");
    }
    logn.push_back(std::log(n));
    logp.push_back(std::log(ws.mean()));
  }
  report.slope = ls_slope(logn, logp);
  report.slope_ok = report.slope >= -1.65 && report.slope <= -1.35;

  const double p_last = report.exit_prob.back();
  report.plateau_value = std::sqrt(static_cast<double>(n_max)) * p_last;
  report.plateau_target = 2.0 * vtab.eval(x0, b) / std::sqrt(2.0 * M_PI * sigma2);
  const double rel_mc = 3.0 * report.exit_se.back() / std::max(p_last, 1e-300);
  report.plateau_ok = std::abs(report.plateau_value - report.plateau_target) <=
                      (0.10 + rel_mc) * report.plateau_target + vtab.certified_error;
  return report;
}

DualitySandwich duality_sandwich_check(const TiltedKernel& primal, const TiltedKernel& dual,
                                       const Direction& x0, double c1, double t_min, double t_max,
                                       const RenewalOptions& opts, uint64_t master_seed,
                                       int threads) {
  // LHS: primal walk killed once S drops below c1 (tau_{-c1}^-), unit windows.
  const int nbins = static_cast<int>(std::ceil(t_max - t_min));
  std::vector<double> lhs_counts, lhs_tails;
  killed_occupancy(primal, x0, -c1, opts.horizon, t_min, nbins, opts.replicas, master_seed,
                   threads, lhs_counts, lhs_tails);

  // RHS: dual weak-ascending ladder heights, half-unit bins so the widened
  // window [t - c1, t + 1 + c1] can be covered by rounding outward.
  const double rhs_lo = t_min - c1 - 1.0;
  const double rhs_hi = t_max + c1 + 2.0;
  const double half = 0.5;
  const int rhs_bins = static_cast<int>(std::ceil((rhs_hi - rhs_lo) / half));
  std::vector<double> rhs_counts(opts.replicas * rhs_bins, 0.0);
  parallel_for(opts.replicas, threads, [&](uint64_t rep) {
    Rng rng(master_seed ^ 0xd0a1ULL, rep);
    Direction x = x0;
    double S = 0.0, level = 0.0;
    auto record = [&](double height) {
      const int bin = static_cast<int>(std::floor((height - rhs_lo) / half));
      if (bin >= 0 && bin < rhs_bins) rhs_counts[rep * rhs_bins + bin] += 1.0;
    };
    record(0.0);
    for (int n = 1; n <= opts.horizon; ++n) {
      dual.step(x, S, rng);
      if (S >= level) {
        level = S;
        record(S);
        if (S > rhs_hi) break;
      }
    }
  });

  DualitySandwich out;
  std::vector<RunningStat> lhs_stats(nbins);
  std::vector<RunningStat> rhs_stats(rhs_bins);
  for (uint64_t rep = 0; rep < opts.replicas; ++rep) {
    for (int b = 0; b < nbins; ++b) lhs_stats[b].add(lhs_counts[rep * nbins + b]);
    for (int b = 0; b < rhs_bins; ++b) rhs_stats[b].add(rhs_counts[rep * rhs_bins + b]);
  }
  for (int b = 0; b < nbins; ++b) {
    const double t = t_min + b;
    // Dual window [t - c1, t + 1 + c1], rounded outward to half-bins.
    const int lo = std::max(0, static_cast<int>(std::floor((t - c1 - rhs_lo) / half)));
    const int hi = std::min(rhs_bins - 1,
                            static_cast<int>(std::ceil((t + 1.0 + c1 - rhs_lo) / half)));
    double rhs = 0.0;
    for (int k = lo; k <= hi; ++k) rhs += rhs_stats[k].mean();
    const double lhs = lhs_stats[b].mean();
    out.t_values.push_back(t);
    out.lhs.push_back(lhs);
    out.rhs.push_back(rhs);
    if (rhs > 0.0) {
      out.fitted_C = std::max(out.fitted_C, lhs / rhs);
    } else if (lhs > 0.0) {
      ++out.empty_rhs;
    }
  }
  return out;
}

std::string VAlphaTable::to_json() const {
  json j{{"coarse_x", xgrid.requested_size()},
         {"d", xgrid.dim()},
         {"y_grid", y_grid},
         {"values", values},
         {"certified_error", certified_error},
         {"stat_error", stat_error},
         {"harmonicity_residual", harmonicity_residual},
         {"c_low", c_low},
         {"c_high", c_high}};
  return j.dump();
}

VAlphaTable VAlphaTable::from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    VAlphaTable tab;
    tab.xgrid = DirectionGrid::make(j.at("d").get<int>(), j.at("coarse_x").get<int>());
    tab.y_grid = j.at("y_grid").get<std::vector<double>>();
    tab.values = j.at("values").get<std::vector<double>>();
    tab.certified_error = j.at("certified_error").get<double>();
    tab.stat_error = j.at("stat_error").get<double>();
    tab.harmonicity_residual = j.at("harmonicity_residual").get<double>();
    tab.c_low = j.at("c_low").get<double>();
    tab.c_high = j.at("c_high").get<double>();
    return tab;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("V table JSON: ") + e.what());
  }
}

}  // namespace mbrw
