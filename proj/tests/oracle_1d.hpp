// Independent scalar oracle for rank-one models. The projective action of
// c J collapses every direction to the simplex center and ||c J x|| = 2c for
// any sum-1 x, so the matrix system reduces to a plain branching random walk
// on R with displacement -log(2 lambda c_j) per child. Everything here is
// implemented directly on scalars: no matrices, grids or kernels, so it is an
// independent check of the engine's code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mbrw/model.hpp"
#include "mbrw/rng.hpp"

namespace oracle1d {

struct Brw1D {
  std::vector<double> inc;     // child displacement per atom
  std::vector<double> q_cdf;   // atom cdf
  std::vector<double> tilt_cdf;  // tilted atom cdf at alpha
  std::vector<double> off_cdf;   // offspring count cdf
  std::vector<int> off_count;
  double alpha = 1.0;
  double mean_n = 0.0;

  // Reads the scalars out of a calibrated rank-one spec; the reduction
  // formulas (2 lambda c_j, tilted weights q_j (2 lambda c_j)^alpha) are the
  // oracle's own closed form.
  static Brw1D from_rank_one(const mbrw::ModelSpec& spec, double alpha) {
    Brw1D o;
    o.alpha = alpha;
    o.mean_n = spec.offspring.mean();
    double qacc = 0.0, tacc = 0.0;
    std::vector<double> tilt_w;
    for (const auto& [mat, w] : spec.atoms) {
      const double two_lc = 2.0 * spec.scale_lambda * mat(0, 0);  // all entries equal
      o.inc.push_back(-std::log(two_lc));
      qacc += w;
      o.q_cdf.push_back(qacc);
      tilt_w.push_back(w * std::pow(two_lc, alpha));
    }
    o.q_cdf.back() = 1.0;
    double total = 0.0;
    for (double w : tilt_w) total += w;
    for (double w : tilt_w) {
      tacc += w / total;
      o.tilt_cdf.push_back(tacc);
    }
    o.tilt_cdf.back() = 1.0;
    double oacc = 0.0;
    for (const auto& [n, p] : spec.offspring.pmf()) {
      o.off_count.push_back(n);
      oacc += p;
      o.off_cdf.push_back(oacc);
    }
    o.off_cdf.back() = 1.0;
    return o;
  }

  int sample_offspring(mbrw::Rng& rng) const {
    return off_count[rng.discrete_cdf(off_cdf.data(), static_cast<int>(off_cdf.size()))];
  }
  double sample_increment(mbrw::Rng& rng) const {
    return inc[rng.discrete_cdf(q_cdf.data(), static_cast<int>(q_cdf.size()))];
  }
  double tilted_increment(mbrw::Rng& rng) const {
    return inc[rng.discrete_cdf(tilt_cdf.data(), static_cast<int>(tilt_cdf.size()))];
  }

  // One tree replica; returns D_n = sum S e^{-alpha S} and W_n = sum e^{-alpha S}
  // at the requested depths (r = 1, l = 0 in the rank-one reduction).
  struct Series {
    std::vector<double> W, D;
  };
  Series run_tree(const std::vector<int>& depths, double b0, mbrw::Rng& rng,
                  size_t cap = 20'000'000) const {
    Series out;
    std::vector<double> cur{b0}, next;
    size_t di = 0;
    const int n_max = depths.back();
    for (int gen = 0; gen <= n_max; ++gen) {
      if (gen > 0) {
        next.clear();
        for (double s : cur) {
          const int kids = sample_offspring(rng);
          for (int c = 0; c < kids; ++c) next.push_back(s + sample_increment(rng));
          if (next.size() > cap) throw mbrw::MathError("oracle population cap");
        }
        cur.swap(next);
      }
      if (di < depths.size() && depths[di] == gen) {
        ++di;
        double W = 0.0, D = 0.0;
        for (double s : cur) {
          const double e = std::exp(-alpha * s);
          W += e;
          D += s * e;
        }
        out.W.push_back(W);
        out.D.push_back(D);
      }
      if (cur.empty()) {
        while (di < depths.size()) {
          out.W.push_back(0.0);
          out.D.push_back(0.0);
          ++di;
        }
        break;
      }
    }
    return out;
  }

  // E[(y + S_n) 1{tau_y > n}] plateau for the tilted scalar walk.
  double estimate_V(double y, int n, uint64_t replicas, uint64_t seed) const {
    double acc = 0.0;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      mbrw::Rng rng(seed, rep);
      double S = 0.0;
      bool alive = true;
      for (int k = 0; k < n; ++k) {
        S += tilted_increment(rng);
        if (y + S < 0.0) {
          alive = false;
          break;
        }
      }
      if (alive) acc += y + S;
    }
    return acc / static_cast<double>(replicas);
  }

  // (1/b) sum_{n <= horizon} E[(b+S_n) f(b+S_n); tau_b > n] on the scalar walk.
  std::pair<double, double> green(double b, int horizon, uint64_t replicas, uint64_t seed) const {
    double sum = 0.0, sumsq = 0.0;
    for (uint64_t rep = 0; rep < replicas; ++rep) {
      mbrw::Rng rng(seed, rep);
      double S = 0.0;
      double acc = b * std::exp(-b);
      for (int n = 1; n <= horizon; ++n) {
        S += tilted_increment(rng);
        if (b + S < 0.0) break;
        acc += (b + S) * std::exp(-(b + S));
      }
      sum += acc;
      sumsq += acc * acc;
    }
    const double mean = sum / static_cast<double>(replicas);
    const double var = (sumsq / static_cast<double>(replicas) - mean * mean) /
                       static_cast<double>(replicas - 1);
    return {mean / b, std::sqrt(std::max(var, 0.0)) / b};
  }
};

}  // namespace oracle1d
