#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace softpick {

using Index = Eigen::Index;

// Dense row-major storage throughout. Vectors are columns.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  }
}

/// Seeded generator whose stream depends only on the seed. mt19937_64 output
/// is fixed by the standard; the distributions on top are implemented here
/// because std:: distributions differ between library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Matrix product with a fixed summation order: every entry accumulates over
/// the inner dimension left to right, independent of the operand sizes.
template <typename DA, typename DB>
Matrix<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DA::Scalar;
  static_assert(std::is_same_v<Scalar, typename DB::Scalar>, "matmul: operands must share a dtype");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.rows(), a.cols()) + " x " +
                         shape_string(b.rows(), b.cols()));
  }
  const Matrix<Scalar> lhs = a;
  const Matrix<Scalar> rhs = b;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(lhs.rows(), rhs.cols());
  for (Index i = 0; i < lhs.rows(); ++i) {
    for (Index k = 0; k < lhs.cols(); ++k) {
      const Scalar aik = lhs(i, k);
      out.row(i) += aik * rhs.row(k);
    }
  }
  return out;
}

/// Per-row maximum over valid entries. Rows without any valid entry yield 0.
template <typename Derived>
Vector<typename Derived::Scalar> rowmax(const Eigen::MatrixBase<Derived>& t, const BoolMatrix* valid = nullptr) {
  using Scalar = typename Derived::Scalar;
  if (valid && (valid->rows() != t.rows() || valid->cols() != t.cols())) {
    throw DimensionError("rowmax: mask shape " + shape_string(valid->rows(), valid->cols()) +
                         " does not match " + shape_string(t.rows(), t.cols()));
  }
  Vector<Scalar> out(t.rows());
  for (Index i = 0; i < t.rows(); ++i) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < t.cols(); ++j) {
      if (valid && !(*valid)(i, j)) continue;
      best = std::max(best, t(i, j));
    }
    out(i) = std::isinf(best) && best < 0 ? Scalar(0) : best;
  }
  return out;
}

/// Per-row sum, accumulated left to right.
template <typename Derived>
Vector<typename Derived::Scalar> rowsum(const Eigen::MatrixBase<Derived>& t) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> out(t.rows());
  for (Index i = 0; i < t.rows(); ++i) {
    Scalar acc = 0;
    for (Index j = 0; j < t.cols(); ++j) acc += t(i, j);
    out(i) = acc;
  }
  return out;
}

/// I.i.d. normal(0, scale^2) entries, drawn in row-major order.
template <typename Scalar>
Matrix<Scalar> randn(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  if (!(scale > 0.0)) throw std::invalid_argument("randn: scale must be positive");
  if (rows < 1 || cols < 1) throw DimensionError("randn: empty shape " + shape_string(rows, cols));
  Matrix<Scalar> out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(scale * rng.normal());
  return out;
}

}  // namespace softpick
