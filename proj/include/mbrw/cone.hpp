#pragma once

#include <array>
#include <cmath>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbrw {

class MathError : public std::runtime_error {
 public:
  explicit MathError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

constexpr int kMaxDim = 8;

/// Allowable nonnegative d x d matrix (every row and column has a positive
/// entry). Row-major storage, immutable after construction.
class PosMatrix {
 public:
  PosMatrix(int d, std::vector<double> entries);

  static PosMatrix identity(int d);
  static PosMatrix all_ones(int d);

  int dim() const { return d_; }
  double operator()(int i, int j) const { return e_[static_cast<size_t>(i) * d_ + j]; }
  std::span<const double> entries() const { return e_; }

  bool strictly_positive() const;
  PosMatrix transpose() const;
  PosMatrix scaled(double c) const;
  PosMatrix operator*(const PosMatrix& rhs) const;  // this * rhs

  double max_entry() const;
  double min_entry() const;

 private:
  int d_;
  std::vector<double> e_;
};

/// Point of the positive part of the unit sphere for the 1-norm: nonnegative
/// coordinates summing to 1 (tolerance 1e-12 at construction, renormalized).
/// Inline storage so particle arrays stay heap-free in deep simulations.
class Direction {
 public:
  explicit Direction(std::span<const double> coords);
  explicit Direction(const std::vector<double>& coords)
      : Direction(std::span<const double>(coords)) {}
  Direction(std::initializer_list<double> coords)
      : Direction(std::span<const double>(coords.begin(), coords.size())) {}

  static Direction uniform(int d);        // center of the simplex
  static Direction vertex(int d, int i);  // e_i

  int dim() const { return d_; }
  double operator[](int i) const { return c_[i]; }
  std::span<const double> coords() const { return {c_.data(), static_cast<size_t>(d_)}; }
  const double* data() const { return c_.data(); }

  Direction() = default;  // zero-dimensional placeholder

 private:
  std::array<double, kMaxDim> c_{};
  int d_ = 0;
  friend Direction direction_unchecked(const double* coords, int d);
};

/// Internal: wraps already-normalized coordinates without re-validation.
Direction direction_unchecked(const double* coords, int d);
inline Direction direction_unchecked(std::initializer_list<double> coords) {
  return direction_unchecked(coords.begin(), static_cast<int>(coords.size()));
}

/// Operator norm for the 1-norm on the cone: max column sum.
double op_norm(const PosMatrix& g);

/// iota(g) = inf ||gv||/||v|| over the cone: min column sum.
double iota(const PosMatrix& g);

/// Projective action g.x = gx / ||gx||.
Direction act(const PosMatrix& g, const Direction& x);

/// Norm cocycle sigma(g, x) = log ||gx||.
double cocycle(const PosMatrix& g, const Direction& x);

/// Low-level kernel used by hot loops: y <- gx (unnormalized), returns ||gx||.
/// g is row-major d x d, x and y are length-d arrays (y must not alias x).
double apply_raw(const double* g, const double* x, double* y, int d);

/// Furstenberg-Kesten constants for a set of strictly positive atoms.
/// kappa = max over atoms of (max entry / min entry), clamped to 1+1e-9 when
/// all entries of every atom are equal; c0 = kappa_bar = 2 log kappa;
/// c1 = c0 + kappa_bar + log d.
struct FKConstants {
  double kappa;
  double kappa_bar;
  double c0;
  double c1;
  int d;
};

FKConstants fk_constants(const std::vector<PosMatrix>& atoms, int d);

}  // namespace mbrw
