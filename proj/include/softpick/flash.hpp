#pragma once

#include "softpick/numerics.hpp"
#include "softpick/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace softpick {

struct BlockSpec {
  Index rows = 64;  // query rows per tile
  Index cols = 64;  // key columns per tile

  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("BlockSpec: block sizes must be >= 1");
  }
};

/// How scores are formed and which of them are visible.
///
/// Scores are S(i, j) = scale_i * <q_i, k_j>. `row_scale`, when non-empty,
/// supplies one multiplier per query row (scalable softpick); otherwise every
/// row uses `scale`. A key j is visible to query i when `key_valid[j]` (or the
/// mask is empty) and, for causal attention, j <= i.
template <typename Scalar>
struct AttentionOptions {
  ScorerKind scorer = ScorerKind::softpick();
  bool causal = true;
  Scalar scale = 1;
  Vector<Scalar> row_scale;
  std::vector<bool> key_valid;

  Scalar scale_for(Index row) const { return row_scale.size() > 0 ? row_scale(row) : scale; }
  bool visible(Index row, Index col) const {
    if (causal && col > row) return false;
    return key_valid.empty() || key_valid[static_cast<std::size_t>(col)];
  }
};

/// Deliberate kernel faults for negative-control testing.
struct KernelFaults {
  // Rescale the running output by the inverted factor, as literally written
  // in the tiled algorithm's update line, instead of the factor used for l.
  bool invert_rescale = false;
};

/// Final row max of the scaled visible scores and the first key attaining it
/// (-1 for rows with no visible key).
template <typename Scalar>
struct RowMax {
  Vector<Scalar> m;
  std::vector<Index> col;
};

template <typename Scalar>
struct FlashOutput {
  Matrix<Scalar> O;
  Vector<Scalar> L;  // per-row m + log(l + eps)
  RowMax<Scalar> rowmax;
};

template <typename Scalar>
struct RefOutput {
  Matrix<Scalar> O;
  Matrix<Scalar> A;  // full attention map
  Vector<Scalar> L;
  RowMax<Scalar> rowmax;
};

template <typename Scalar>
struct FlashGrads {
  Matrix<Scalar> dQ, dK, dV;
  Vector<Scalar> d_row_scale;  // dLoss / d scale_i
};

namespace detail {

template <typename Scalar>
void check_qkv(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
               const AttentionOptions<Scalar>& opts) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: Q " + shape_string(q.rows(), q.cols()) + " and K " +
                         shape_string(k.rows(), k.cols()) + " differ in head dim");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: K " + shape_string(k.rows(), k.cols()) + " and V " +
                         shape_string(v.rows(), v.cols()) + " differ in length");
  }
  if (opts.row_scale.size() > 0 && opts.row_scale.size() != q.rows()) {
    throw DimensionError("attention: row_scale length does not match query count");
  }
  if (!opts.key_valid.empty() && static_cast<Index>(opts.key_valid.size()) != k.rows()) {
    throw DimensionError("attention: key mask length does not match key count");
  }
  opts.scorer.validate();
}

// Fallback denominator for rows that see no key at all.
template <typename Scalar>
Scalar empty_row_denominator(const ScorerKind& scorer) {
  return scorer.eps > 0 ? static_cast<Scalar>(scorer.eps) : Scalar(1);
}

// Highest key index any row in [row_begin, row_end) can see under causality.
inline Index last_visible_key(bool causal, Index row_end, Index n_keys) {
  return causal ? std::min(row_end, n_keys) : n_keys;
}

}  // namespace detail

/// Dense attention: materializes the score matrix and normalizes each row over
/// its visible keys only. Masked entries are exactly zero in A and take no
/// part in the row's max or denominator.
template <typename Scalar>
RefOutput<Scalar> reference_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                      const AttentionOptions<Scalar>& opts) {
  detail::check_qkv(q, k, v, opts);
  const Index n_q = q.rows();
  const Index n_k = k.rows();
  Matrix<Scalar> scores = matmul(q, k.transpose());

  RefOutput<Scalar> out;
  out.A = Matrix<Scalar>::Zero(n_q, n_k);
  out.L.resize(n_q);
  out.rowmax.m = Vector<Scalar>::Zero(n_q);
  out.rowmax.col.assign(static_cast<std::size_t>(n_q), -1);
  std::vector<Index> cols;
  Vector<Scalar> compact;
  for (Index i = 0; i < n_q; ++i) {
    cols.clear();
    for (Index j = 0; j < n_k; ++j) {
      if (opts.visible(i, j)) cols.push_back(j);
    }
    if (cols.empty()) {
      out.L(i) = std::log(detail::empty_row_denominator<Scalar>(opts.scorer));
      continue;
    }
    const Scalar s = opts.scale_for(i);
    compact.resize(static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) compact(static_cast<Index>(c)) = s * scores(i, cols[c]);
    const auto row = normalize_row(opts.scorer, compact);
    const Index top = argmax_index(compact);
    out.rowmax.m(i) = compact(top);
    out.rowmax.col[static_cast<std::size_t>(i)] = cols[static_cast<std::size_t>(top)];
    for (std::size_t c = 0; c < cols.size(); ++c) out.A(i, cols[c]) = row.outputs(static_cast<Index>(c));
    out.L(i) = row.log_normalizer();
  }
  out.O = matmul(out.A, v);
  return out;
}

/// Tiled single-pass forward. Keeps a running row max m, a running
/// denominator l and an unnormalized output accumulator per query block; the
/// score matrix only ever exists one B_r x B_c tile at a time.
template <typename Scalar>
FlashOutput<Scalar> flash_forward(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                  const AttentionOptions<Scalar>& opts, BlockSpec block = {},
                                  KernelFaults faults = {}) {
  detail::check_qkv(q, k, v, opts);
  block.validate();
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  const ScorerTag tag = opts.scorer.tag;
  const bool softpick_like = opts.scorer.softpick_family();
  const bool rectified = tag == ScorerTag::RectifiedOnlySoftmax;

  const Index n_q = q.rows();
  const Index n_k = k.rows();
  const Index d_v = v.cols();

  FlashOutput<Scalar> out;
  out.O = Matrix<Scalar>::Zero(n_q, d_v);
  out.L.resize(n_q);
  out.rowmax.m = Vector<Scalar>::Zero(n_q);
  out.rowmax.col.assign(static_cast<std::size_t>(n_q), -1);

  Matrix<Scalar> tile, weights;
  Arr p;
  for (Index i0 = 0; i0 < n_q; i0 += block.rows) {
    const Index br = std::min(block.rows, n_q - i0);
    const Index key_end = detail::last_visible_key(opts.causal, i0 + br, n_k);
    Vector<Scalar> m = Vector<Scalar>::Constant(br, kNegInf);
    Vector<Scalar> ell = Vector<Scalar>::Zero(br);
    Matrix<Scalar> acc = Matrix<Scalar>::Zero(br, d_v);

    for (Index j0 = 0; j0 < key_end; j0 += block.cols) {
      const Index bc = std::min(block.cols, key_end - j0);
      tile.noalias() = q.middleRows(i0, br) * k.middleRows(j0, bc).transpose();
      weights.setZero(br, bc);

      for (Index r = 0; r < br; ++r) {
        const Index row = i0 + r;
        tile.row(r) *= opts.scale_for(row);
        Scalar tile_max = kNegInf;
        Index tile_arg = -1;
        for (Index c = 0; c < bc; ++c) {
          if (opts.visible(row, j0 + c) && tile(r, c) > tile_max) {
            tile_max = tile(r, c);
            tile_arg = j0 + c;
          }
        }
        if (tile_max > m(r)) out.rowmax.col[static_cast<std::size_t>(row)] = tile_arg;
        const Scalar m_new = std::max(m(r), tile_max);
        if (m_new == kNegInf) continue;  // nothing visible yet
        const Scalar rescale = m(r) == kNegInf ? Scalar(0) : std::exp(m(r) - m_new);
        const Scalar floor = std::exp(-m_new);

        p = (tile.row(r).array() - m_new).exp();
        Scalar row_sum = 0;
        for (Index c = 0; c < bc; ++c) {
          const Scalar s = tile(r, c);
          Scalar numer = 0, denom = 0;
          if (opts.visible(row, j0 + c)) {
            if (softpick_like) {
              const Scalar shifted = p(0, c) - floor;
              numer = s > 0 ? std::max(shifted, Scalar(0)) : Scalar(0);
              denom = std::abs(shifted);
            } else if (!rectified || s >= 0) {
              numer = denom = p(0, c);
            }
          }
          weights(r, c) = numer;
          row_sum += denom;
        }
        ell(r) = rescale * ell(r) + row_sum;
        if (faults.invert_rescale) {
          acc.row(r) *= rescale == 0 ? Scalar(0) : Scalar(1) / rescale;
        } else {
          acc.row(r) *= rescale;
        }
        m(r) = m_new;
      }
      acc.noalias() += weights * v.middleRows(j0, bc);
    }

    for (Index r = 0; r < br; ++r) {
      const Index row = i0 + r;
      Scalar mr = m(r);
      Scalar lr = ell(r);
      if (mr == kNegInf) {
        mr = 0;
        lr = detail::empty_row_denominator<Scalar>(opts.scorer);
      } else if (softpick_like) {
        lr += static_cast<Scalar>(opts.scorer.eps);
      } else if (tag == ScorerTag::SoftmaxPlusOne) {
        // The implicit zero logit contributes e^{0 - m}.
        lr += std::exp(-mr);
      } else if (rectified && lr == 0) {
        lr = 1;
      }
      if (lr > 0) out.O.row(row) = acc.row(r) / lr;
      out.L(row) = mr + std::log(lr);
      out.rowmax.m(row) = mr;
    }
  }
  return out;
}

/// Tiled backward. Recomputes each score tile from Q, K and the stored L;
/// with E = exp(S - L) the score gradient is
///   dS = E o (gate_num(S) o dP - gate_den(S) o D),   D = rowsum(dO o O),
/// where softpick uses gate_num = step, gate_den = sign and the softmax
/// family uses 1 (rectified-only: the indicator S >= 0) for both.
///
/// Softpick's guard eps enters the shifted denominator as eps e^{-m}, so the
/// output also depends on the row max. Given `rowmax` from the forward pass
/// that dependence is included (dS at the argmax gains -eps e^{m - L} D);
/// without it m is treated as a constant.
template <typename Scalar>
FlashGrads<Scalar> flash_backward(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                  const Matrix<Scalar>& o, const Matrix<Scalar>& d_o, const Vector<Scalar>& L,
                                  const AttentionOptions<Scalar>& opts, BlockSpec block = {},
                                  const RowMax<Scalar>* rowmax = nullptr) {
  detail::check_qkv(q, k, v, opts);
  block.validate();
  require_same_shape(o, d_o, "flash_backward O/dO");
  if (o.rows() != q.rows() || o.cols() != v.cols() || L.size() != q.rows()) {
    throw DimensionError("flash_backward: O " + shape_string(o.rows(), o.cols()) + " or L inconsistent with Q " +
                         shape_string(q.rows(), q.cols()));
  }
  const ScorerTag tag = opts.scorer.tag;
  const bool softpick_like = opts.scorer.softpick_family();
  const bool rectified = tag == ScorerTag::RectifiedOnlySoftmax;
  const Index n_q = q.rows();
  const Index n_k = k.rows();

  FlashGrads<Scalar> g;
  g.dQ = Matrix<Scalar>::Zero(n_q, q.cols());
  g.dK = Matrix<Scalar>::Zero(n_k, k.cols());
  g.dV = Matrix<Scalar>::Zero(n_k, v.cols());
  g.d_row_scale = Vector<Scalar>::Zero(n_q);

  const Vector<Scalar> D = (d_o.array() * o.array()).rowwise().sum();
  const Vector<Scalar> floor = (-L.array()).exp();
  const bool guard_term = softpick_like && opts.scorer.eps > 0 && rowmax != nullptr;
  if (rowmax && (rowmax->m.size() != n_q || static_cast<Index>(rowmax->col.size()) != n_q)) {
    throw DimensionError("flash_backward: rowmax does not match Q");
  }

  Matrix<Scalar> raw, R, dP, dS;
  for (Index j0 = 0; j0 < n_k; j0 += block.cols) {
    const Index bc = std::min(block.cols, n_k - j0);
    auto Kj = k.middleRows(j0, bc);
    auto Vj = v.middleRows(j0, bc);
    auto dKj = g.dK.middleRows(j0, bc);
    auto dVj = g.dV.middleRows(j0, bc);
    for (Index i0 = 0; i0 < n_q; i0 += block.rows) {
      const Index br = std::min(block.rows, n_q - i0);
      if (opts.causal && j0 > i0 + br - 1) continue;  // tile entirely above the diagonal
      auto Qi = q.middleRows(i0, br);
      raw.noalias() = Qi * Kj.transpose();
      dP.noalias() = d_o.middleRows(i0, br) * Vj.transpose();
      R.setZero(br, bc);
      dS.setZero(br, bc);
      for (Index r = 0; r < br; ++r) {
        const Index row = i0 + r;
        const Scalar scale = opts.scale_for(row);
        for (Index c = 0; c < bc; ++c) {
          if (!opts.visible(row, j0 + c)) continue;
          const Scalar s = scale * raw(r, c);
          const Scalar e = std::exp(s - L(row));
          Scalar gate_num = 1, gate_den = 1;
          if (softpick_like) {
            R(r, c) = s > 0 ? std::max(e - floor(row), Scalar(0)) : Scalar(0);
            gate_num = step_fn(s);
            gate_den = sign_fn(s);
          } else if (rectified) {
            gate_num = gate_den = s >= 0 ? Scalar(1) : Scalar(0);
            R(r, c) = gate_num * e;
          } else {
            R(r, c) = e;
          }
          dS(r, c) = e * (gate_num * dP(r, c) - gate_den * D(row));
        }
        if (guard_term) {
          const Index top = rowmax->col[static_cast<std::size_t>(row)] - j0;
          if (top >= 0 && top < bc) {
            dS(r, top) -= static_cast<Scalar>(opts.scorer.eps) * std::exp(rowmax->m(row) - L(row)) * D(row);
          }
        }
        g.d_row_scale(row) += dS.row(r).dot(raw.row(r));
        dS.row(r) *= scale;
      }
      dVj.noalias() += R.transpose() * d_o.middleRows(i0, br);
      g.dQ.middleRows(i0, br).noalias() += dS * Kj;
      dKj.noalias() += dS.transpose() * Qi;
    }
  }
  return g;
}

}  // namespace softpick
