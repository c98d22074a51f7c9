#pragma once

#include "softpick/numerics.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace softpick {

enum class ScorerTag { Softmax, Softpick, RectifiedOnlySoftmax, SoftmaxPlusOne, ScalableSoftpick };

/// Selects the row normalizer used inside attention.
struct ScorerKind {
  ScorerTag tag = ScorerTag::Softpick;
  double eps = 1e-6;              // softpick denominator guard
  std::optional<double> s_param;  // scalable softpick only

  static ScorerKind softmax() { return {ScorerTag::Softmax, 0.0, std::nullopt}; }
  static ScorerKind softpick(double eps = 1e-6) { return {ScorerTag::Softpick, eps, std::nullopt}; }
  static ScorerKind rectified_only() { return {ScorerTag::RectifiedOnlySoftmax, 0.0, std::nullopt}; }
  static ScorerKind softmax_plus_one() { return {ScorerTag::SoftmaxPlusOne, 0.0, std::nullopt}; }
  static ScorerKind scalable(double s = 1.0, double eps = 1e-6) { return {ScorerTag::ScalableSoftpick, eps, s}; }

  bool softpick_family() const { return tag == ScorerTag::Softpick || tag == ScorerTag::ScalableSoftpick; }

  void validate() const {
    if (!(eps >= 0.0)) throw std::invalid_argument("scorer eps must be >= 0");
    if (s_param.has_value() != (tag == ScorerTag::ScalableSoftpick)) {
      throw std::invalid_argument("scorer s_param must be set exactly for scalable_softpick");
    }
  }
};

inline std::string_view to_string(ScorerTag tag) {
  switch (tag) {
    case ScorerTag::Softmax: return "softmax";
    case ScorerTag::Softpick: return "softpick";
    case ScorerTag::RectifiedOnlySoftmax: return "rectified_only_softmax";
    case ScorerTag::SoftmaxPlusOne: return "softmax_plus_one";
    case ScorerTag::ScalableSoftpick: return "scalable_softpick";
  }
  return "unknown";
}

inline std::optional<ScorerTag> parse_scorer_tag(std::string_view name) {
  for (ScorerTag t : {ScorerTag::Softmax, ScorerTag::Softpick, ScorerTag::RectifiedOnlySoftmax,
                      ScorerTag::SoftmaxPlusOne, ScorerTag::ScalableSoftpick}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

/// One normalized row together with the shift and denominator that produced it.
template <typename Scalar>
struct ScoreRow {
  Vector<Scalar> logits;
  Vector<Scalar> outputs;
  Scalar denom = 0;
  Scalar m = 0;

  /// Log of the full (unshifted) denominator; what the tiled kernel stores as L.
  Scalar log_normalizer() const { return m + std::log(denom > 0 ? denom : Scalar(1)); }
};

// step(0) = 0 and sign(0) = +1.
template <typename Scalar>
inline Scalar step_fn(Scalar x) {
  return x > 0 ? Scalar(1) : Scalar(0);
}
template <typename Scalar>
inline Scalar sign_fn(Scalar x) {
  return x < 0 ? Scalar(-1) : Scalar(1);
}

namespace detail {
template <typename Derived>
Vector<typename Derived::Scalar> as_row(const Eigen::MatrixBase<Derived>& x, const char* what) {
  if (x.size() < 1) throw DimensionError(std::string(what) + ": empty input");
  Vector<typename Derived::Scalar> v = x.reshaped();
  if (v.hasNaN()) throw std::domain_error(std::string(what) + ": NaN input");
  return v;
}
}  // namespace detail

template <typename Derived>
Vector<typename Derived::Scalar> softmax_safe(const Eigen::MatrixBase<Derived>& x) {
  auto v = detail::as_row(x, "softmax_safe");
  const auto m = v.maxCoeff();
  Vector<typename Derived::Scalar> e = (v.array() - m).exp();
  return e / e.sum();
}

/// Direct form ReLU(e^x - 1) / (sum |e^x - 1| + eps). Overflows for large x.
template <typename Derived>
Vector<typename Derived::Scalar> softpick(const Eigen::MatrixBase<Derived>& x, double eps) {
  using Scalar = typename Derived::Scalar;
  auto v = detail::as_row(x, "softpick");
  Vector<Scalar> shifted = v.unaryExpr([](Scalar t) { return std::expm1(t); });
  const Scalar denom = shifted.cwiseAbs().sum() + static_cast<Scalar>(eps);
  Vector<Scalar> out = shifted.cwiseMax(Scalar(0));
  if (denom > 0) out /= denom;
  return out;
}

/// Max-shifted softpick. Also returns m and the shifted denominator.
template <typename Derived>
ScoreRow<typename Derived::Scalar> softpick_safe(const Eigen::MatrixBase<Derived>& x, double eps) {
  using Scalar = typename Derived::Scalar;
  ScoreRow<Scalar> row;
  row.logits = detail::as_row(x, "softpick_safe");
  row.m = row.logits.maxCoeff();
  const Scalar floor = std::exp(-row.m);
  const Vector<Scalar> p = (row.logits.array() - row.m).exp() - floor;
  row.denom = p.cwiseAbs().sum() + static_cast<Scalar>(eps);
  // exp(x - m) and exp(-m) may round apart at x = 0; zeros follow the sign of x
  row.outputs = (row.logits.array() > Scalar(0)).select(p.cwiseMax(Scalar(0)), Scalar(0));
  if (row.denom > 0) row.outputs /= row.denom;
  return row;
}

/// First index of the maximum, the entry the shift m follows.
template <typename Scalar>
Index argmax_index(const Vector<Scalar>& x) {
  Index best = 0;
  for (Index i = 1; i < x.size(); ++i) {
    if (x(i) > x(best)) best = i;
  }
  return best;
}

/// Full Jacobian J(i, j) = d s_i / d x_j, using the shift and denominator of softpick_safe:
///   J(i, j) = e^{x_j - m} / den * (delta_ij step(x_i) - sign(x_j) s_i) - [j = argmax] s_i eps / den.
/// The last term is the dependence of the guard eps e^{-m} on m; it vanishes at eps = 0.
template <typename Derived>
Matrix<typename Derived::Scalar> softpick_jacobian(const Eigen::MatrixBase<Derived>& x, double eps) {
  using Scalar = typename Derived::Scalar;
  const auto row = softpick_safe(x, eps);
  const Index n = row.logits.size();
  Matrix<Scalar> jac = Matrix<Scalar>::Zero(n, n);
  if (!(row.denom > 0)) return jac;
  for (Index j = 0; j < n; ++j) {
    const Scalar w = std::exp(row.logits(j) - row.m) / row.denom;
    const Scalar sj = sign_fn(row.logits(j));
    for (Index i = 0; i < n; ++i) {
      const Scalar diag = i == j ? step_fn(row.logits(i)) : Scalar(0);
      jac(i, j) = w * (diag - sj * row.outputs(i));
    }
  }
  if (eps > 0) jac.col(argmax_index(row.logits)) -= row.outputs * (static_cast<Scalar>(eps) / row.denom);
  return jac;
}

/// grad_out^T J without forming J.
template <typename DX, typename DG>
Vector<typename DX::Scalar> softpick_vjp(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& grad_out,
                                         double eps) {
  using Scalar = typename DX::Scalar;
  const auto row = softpick_safe(x, eps);
  const Vector<Scalar> g = grad_out.reshaped();
  if (g.size() != row.logits.size()) throw DimensionError("softpick_vjp: gradient length mismatch");
  Vector<Scalar> dx = Vector<Scalar>::Zero(g.size());
  if (!(row.denom > 0)) return dx;
  const Scalar gs = g.dot(row.outputs);
  for (Index j = 0; j < g.size(); ++j) {
    const Scalar xj = row.logits(j);
    dx(j) = std::exp(xj - row.m) / row.denom * (step_fn(xj) * g(j) - sign_fn(xj) * gs);
  }
  if (eps > 0) dx(argmax_index(row.logits)) -= static_cast<Scalar>(eps) / row.denom * gs;
  return dx;
}

/// Softmax over the entries with x >= 0; negative entries map to 0. An
/// all-negative row yields the zero vector.
template <typename Derived>
ScoreRow<typename Derived::Scalar> rectified_only_softmax_row(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  ScoreRow<Scalar> row;
  row.logits = detail::as_row(x, "rectified_only_softmax");
  row.m = row.logits.maxCoeff();
  row.outputs = Vector<Scalar>::Zero(row.logits.size());
  if (row.m < 0) return row;
  for (Index i = 0; i < row.logits.size(); ++i) {
    if (row.logits(i) >= 0) row.outputs(i) = std::exp(row.logits(i) - row.m);
  }
  row.denom = row.outputs.sum();
  row.outputs /= row.denom;
  return row;
}

template <typename Derived>
Vector<typename Derived::Scalar> rectified_only_softmax(const Eigen::MatrixBase<Derived>& x) {
  return rectified_only_softmax_row(x).outputs;
}

/// e^{x_i} / (1 + sum_j e^{x_j}), shifted by max(0, max x).
template <typename Derived>
ScoreRow<typename Derived::Scalar> softmax_plus_one_row(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  ScoreRow<Scalar> row;
  row.logits = detail::as_row(x, "softmax_plus_one");
  row.m = std::max(row.logits.maxCoeff(), Scalar(0));
  const Vector<Scalar> e = (row.logits.array() - row.m).exp();
  row.denom = std::exp(-row.m) + e.sum();
  row.outputs = e / row.denom;
  return row;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax_plus_one(const Eigen::MatrixBase<Derived>& x) {
  return softmax_plus_one_row(x).outputs;
}

/// alpha = s * log(n) / sqrt(d_k).
inline double scalable_scale(double s_param, double n, double d_k) {
  if (!(n >= 1.0) || !(d_k >= 1.0)) throw std::invalid_argument("scalable_scale: need n >= 1 and d_k >= 1");
  return s_param * std::log(n) / std::sqrt(d_k);
}

/// Normalizes one row with the given scorer. Scalable softpick normalizes like
/// softpick; its alpha is applied to the scores by the caller.
template <typename Derived>
ScoreRow<typename Derived::Scalar> normalize_row(const ScorerKind& kind, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  switch (kind.tag) {
    case ScorerTag::Softmax: {
      ScoreRow<Scalar> row;
      row.logits = detail::as_row(x, "softmax");
      row.m = row.logits.maxCoeff();
      const Vector<Scalar> e = (row.logits.array() - row.m).exp();
      row.denom = e.sum();
      row.outputs = e / row.denom;
      return row;
    }
    case ScorerTag::Softpick:
    case ScorerTag::ScalableSoftpick:
      return softpick_safe(x, kind.eps);
    case ScorerTag::RectifiedOnlySoftmax:
      return rectified_only_softmax_row(x);
    case ScorerTag::SoftmaxPlusOne:
      return softmax_plus_one_row(x);
  }
  throw std::logic_error("normalize_row: unknown scorer");
}

}  // namespace softpick
