#include "mbrw/grid.hpp"

#include <algorithm>
#include <cmath>

namespace mbrw {

DirectionGrid DirectionGrid::make(int d, int G) {
  if (G < 2) throw ConfigError("grid size must be >= 2");
  DirectionGrid g;
  g.d_ = d;
  g.G_ = G;
  if (d == 2) {
    g.nodes_.reserve(G);
    for (int i = 0; i < G; ++i) {
      const double t = (i + 0.5) / G;
      const double c[2] = {t, 1.0 - t};
      g.nodes_.push_back(direction_unchecked(c, 2));
    }
  } else if (d == 3) {
    g.nodes_.reserve(static_cast<size_t>(G + 1) * (G + 2) / 2);
    for (int i = 0; i <= G; ++i) {
      for (int j = 0; j <= G - i; ++j) {
        const double c[3] = {static_cast<double>(i) / G, static_cast<double>(j) / G,
                             static_cast<double>(G - i - j) / G};
        g.nodes_.push_back(direction_unchecked(c, 3));
      }
    }
  } else {
    throw MathError("direction grid supports d in {2, 3} only, got d=" + std::to_string(d));
  }
  return g;
}

int DirectionGrid::tri_index(int i, int j) const {
  // Row i holds G - i + 1 nodes; rows are stored consecutively.
  return i * (G_ + 1) - i * (i - 1) / 2 + j;
}

DirectionGrid::Stencil DirectionGrid::locate(const Direction& x) const {
  Stencil s{};
  if (d_ == 2) {
    const double t = x[0];
    const double pos = t * G_ - 0.5;
    if (pos <= 0.0) {
      s.count = 1;
      s.idx[0] = 0;
      s.w[0] = 1.0;
      return s;
    }
    if (pos >= G_ - 1) {
      s.count = 1;
      s.idx[0] = G_ - 1;
      s.w[0] = 1.0;
      return s;
    }
    const int i = static_cast<int>(pos);
    const double frac = pos - i;
    s.count = 2;
    s.idx[0] = i;
    s.w[0] = 1.0 - frac;
    s.idx[1] = i + 1;
    s.w[1] = frac;
    return s;
  }
  // d == 3: locate the micro-triangle in barycentric coordinates.
  double f = x[0] * G_;
  double g = x[1] * G_;
  int i = std::min(static_cast<int>(f), G_ - 1);
  int j = std::min(static_cast<int>(g), G_ - 1);
  if (i + j > G_ - 1) {
    // Numerical spill over the diagonal edge; pull back inside.
    const int over = i + j - (G_ - 1);
    if (i >= j) i -= over; else j -= over;
    i = std::max(i, 0);
    j = std::max(j, 0);
  }
  const double u = f - i;
  const double v = g - j;
  if (u + v <= 1.0) {
    s.count = 3;
    s.idx[0] = tri_index(i, j);
    s.w[0] = 1.0 - u - v;
    s.idx[1] = tri_index(i + 1, j);
    s.w[1] = u;
    s.idx[2] = tri_index(i, j + 1);
    s.w[2] = v;
  } else {
    s.count = 3;
    s.idx[0] = tri_index(i + 1, j + 1);
    s.w[0] = u + v - 1.0;
    s.idx[1] = tri_index(i, j + 1);
    s.w[1] = 1.0 - u;
    s.idx[2] = tri_index(i + 1, j);
    s.w[2] = 1.0 - v;
  }
  for (int k = 0; k < 3; ++k) s.w[k] = std::max(s.w[k], 0.0);
  const double total = s.w[0] + s.w[1] + s.w[2];
  for (int k = 0; k < 3; ++k) s.w[k] /= total;
  return s;
}

}  // namespace mbrw
