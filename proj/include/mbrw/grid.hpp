#pragma once

#include <span>
#include <vector>

#include "mbrw/cone.hpp"

namespace mbrw {

/// Discretization of the direction simplex with piecewise-linear
/// interpolation. d=2 uses G uniform interior nodes t_i = (i+1/2)/G in the
/// first coordinate; d=3 uses a triangular barycentric mesh with G
/// subdivisions per edge. Higher dimensions are not supported (MC-only
/// workflows do not need a grid).
class DirectionGrid {
 public:
  static DirectionGrid make(int d, int G);

  int dim() const { return d_; }
  int requested_size() const { return G_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const Direction& node(int i) const { return nodes_[i]; }
  const std::vector<Direction>& nodes() const { return nodes_; }

  /// Interpolation stencil: at most 3 nodes, nonnegative weights summing to 1.
  struct Stencil {
    int idx[3];
    double w[3];
    int count;
  };
  Stencil locate(const Direction& x) const;

  double interp(std::span<const double> values, const Direction& x) const {
    const Stencil s = locate(x);
    double acc = 0.0;
    for (int k = 0; k < s.count; ++k) acc += s.w[k] * values[s.idx[k]];
    return acc;
  }

 private:
  int d_ = 0;
  int G_ = 0;
  std::vector<Direction> nodes_;
  int tri_index(int i, int j) const;  // d=3 node numbering
};

}  // namespace mbrw
