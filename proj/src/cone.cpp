#include "mbrw/cone.hpp"

#include <algorithm>
#include <limits>

namespace mbrw {

namespace {

void check_dim(int d) {
  if (d < 2 || d > kMaxDim) {
    throw ConfigError("matrix dimension must be in [2, " + std::to_string(kMaxDim) +
                      "], got " + std::to_string(d));
  }
}

}  // namespace

PosMatrix::PosMatrix(int d, std::vector<double> entries) : d_(d), e_(std::move(entries)) {
  check_dim(d);
  if (e_.size() != static_cast<size_t>(d) * d) {
    throw ConfigError("matrix entry count does not match dimension");
  }
  for (double v : e_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("matrix entries must be finite and nonnegative");
    }
  }
  // Allowability: every row and every column has a strictly positive entry.
  for (int i = 0; i < d_; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < d_; ++j) {
      row += (*this)(i, j);
      col += (*this)(j, i);
    }
    if (row <= 0.0 || col <= 0.0) {
      throw ConfigError("matrix is not allowable: zero row or column " + std::to_string(i));
    }
  }
}

PosMatrix PosMatrix::identity(int d) {
  check_dim(d);
  std::vector<double> e(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) e[static_cast<size_t>(i) * d + i] = 1.0;
  return PosMatrix(d, std::move(e));
}

PosMatrix PosMatrix::all_ones(int d) {
  check_dim(d);
  return PosMatrix(d, std::vector<double>(static_cast<size_t>(d) * d, 1.0));
}

bool PosMatrix::strictly_positive() const {
  return std::all_of(e_.begin(), e_.end(), [](double v) { return v > 0.0; });
}

PosMatrix PosMatrix::transpose() const {
  std::vector<double> e(e_.size());
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < d_; ++j) e[static_cast<size_t>(j) * d_ + i] = (*this)(i, j);
  return PosMatrix(d_, std::move(e));
}

PosMatrix PosMatrix::scaled(double c) const {
  if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("matrix scale must be positive");
  std::vector<double> e(e_.size());
  for (size_t k = 0; k < e_.size(); ++k) e[k] = c * e_[k];
  return PosMatrix(d_, std::move(e));
}

PosMatrix PosMatrix::operator*(const PosMatrix& rhs) const {
  if (rhs.d_ != d_) throw ConfigError("dimension mismatch in matrix product");
  std::vector<double> e(e_.size(), 0.0);
  for (int i = 0; i < d_; ++i)
    for (int k = 0; k < d_; ++k) {
      const double a = (*this)(i, k);
      if (a == 0.0) continue;
      for (int j = 0; j < d_; ++j) e[static_cast<size_t>(i) * d_ + j] += a * rhs(k, j);
    }
  return PosMatrix(d_, std::move(e));
}

double PosMatrix::max_entry() const { return *std::max_element(e_.begin(), e_.end()); }
double PosMatrix::min_entry() const { return *std::min_element(e_.begin(), e_.end()); }

Direction::Direction(std::span<const double> coords) : d_(static_cast<int>(coords.size())) {
  check_dim(d_);
  double sum = 0.0;
  for (int i = 0; i < d_; ++i) {
    const double v = coords[i];
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("direction coordinates must be finite and nonnegative");
    }
    c_[i] = v;
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ConfigError("direction coordinates must sum to 1 (got " + std::to_string(sum) + ")");
  }
  for (int i = 0; i < d_; ++i) c_[i] /= sum;
}

Direction Direction::uniform(int d) {
  check_dim(d);
  Direction x;
  x.d_ = d;
  for (int i = 0; i < d; ++i) x.c_[i] = 1.0 / d;
  return x;
}

Direction Direction::vertex(int d, int i) {
  check_dim(d);
  if (i < 0 || i >= d) throw ConfigError("vertex index out of range");
  Direction x;
  x.d_ = d;
  x.c_[i] = 1.0;
  return x;
}

Direction direction_unchecked(const double* coords, int d) {
  Direction x;
  x.d_ = d;
  for (int i = 0; i < d; ++i) x.c_[i] = coords[i];
  return x;
}

double op_norm(const PosMatrix& g) {
  const int d = g.dim();
  double best = 0.0;
  for (int j = 0; j < d; ++j) {
    double col = 0.0;
    for (int i = 0; i < d; ++i) col += g(i, j);
    best = std::max(best, col);
  }
  return best;
}

double iota(const PosMatrix& g) {
  const int d = g.dim();
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < d; ++j) {
    double col = 0.0;
    for (int i = 0; i < d; ++i) col += g(i, j);
    best = std::min(best, col);
  }
  return best;
}

double apply_raw(const double* g, const double* x, double* y, int d) {
  double norm = 0.0;
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    const double* row = g + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) acc += row[j] * x[j];
    y[i] = acc;
    norm += acc;  // entries are nonnegative, so the 1-norm is the plain sum
  }
  return norm;
}

Direction act(const PosMatrix& g, const Direction& x) {
  const int d = g.dim();
  if (x.dim() != d) throw ConfigError("dimension mismatch in act()");
  double y[kMaxDim];
  const double norm = apply_raw(g.entries().data(), x.coords().data(), y, d);
  if (!(norm > 0.0)) throw MathError("internal invariant violation: gx = 0 for allowable g");
  for (int i = 0; i < d; ++i) y[i] /= norm;
  return direction_unchecked(y, d);
}

double cocycle(const PosMatrix& g, const Direction& x) {
  const int d = g.dim();
  if (x.dim() != d) throw ConfigError("dimension mismatch in cocycle()");
  double y[kMaxDim];
  const double norm = apply_raw(g.entries().data(), x.data(), y, d);
  if (!(norm > 0.0)) throw MathError("internal invariant violation: gx = 0 for allowable g");
  return std::log(norm);
}

FKConstants fk_constants(const std::vector<PosMatrix>& atoms, int d) {
  check_dim(d);
  if (atoms.empty()) throw ConfigError("fk_constants: empty atom set");
  double kappa = 1.0;
  for (const PosMatrix& g : atoms) {
    if (g.dim() != d) throw ConfigError("fk_constants: atom dimension mismatch");
    if (!g.strictly_positive()) throw MathError("condition A1* violated: atom has a zero entry");
    kappa = std::max(kappa, g.max_entry() / g.min_entry());
  }
  // All-equal entries give kappa = 1; clamp so logs stay defined.
  if (kappa <= 1.0) kappa = 1.0 + 1e-9;
  FKConstants fk;
  fk.kappa = kappa;
  fk.kappa_bar = 2.0 * std::log(kappa);
  fk.c0 = fk.kappa_bar;
  fk.c1 = fk.c0 + fk.kappa_bar + std::log(static_cast<double>(d));
  fk.d = d;
  return fk;
}

}  // namespace mbrw
