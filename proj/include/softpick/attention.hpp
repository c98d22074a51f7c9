#pragma once

#include "softpick/flash.hpp"
#include "softpick/numerics.hpp"
#include "softpick/scorers.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace softpick {

enum class ScaleMode { InvSqrtDk, Scalable };
enum class KernelKind { Reference, Tiled };

struct MhaConfig {
  Index n_heads = 4;
  Index head_dim = 32;
  double rope_theta = 10000.0;
  ScorerKind scorer = ScorerKind::softpick();
  ScaleMode scale_mode = ScaleMode::InvSqrtDk;
  bool capture_maps = false;
  BlockSpec block{};

  Index hidden() const { return n_heads * head_dim; }

  void validate() const {
    if (n_heads < 1 || head_dim < 1) throw std::invalid_argument("MhaConfig: n_heads and head_dim must be >= 1");
    if (head_dim % 2 != 0) throw std::invalid_argument("MhaConfig: head_dim must be even for RoPE");
    if (!(rope_theta > 0)) throw std::invalid_argument("MhaConfig: rope_theta must be positive");
    if ((scale_mode == ScaleMode::Scalable) != (scorer.tag == ScorerTag::ScalableSoftpick)) {
      throw std::invalid_argument("MhaConfig: scalable scale mode requires the scalable_softpick scorer");
    }
    scorer.validate();
    block.validate();
  }
};

template <typename Scalar>
struct MhaWeights {
  Matrix<Scalar> wq, wk, wv, wo;  // hidden x hidden, applied as x * W
  Vector<Scalar> s_param;         // one per head; empty unless scalable

  static MhaWeights zeros(const MhaConfig& cfg) {
    const Index h = cfg.hidden();
    MhaWeights w;
    w.wq = w.wk = w.wv = w.wo = Matrix<Scalar>::Zero(h, h);
    if (cfg.scale_mode == ScaleMode::Scalable) w.s_param = Vector<Scalar>::Zero(cfg.n_heads);
    return w;
  }
};

/// Rotates each pair (2k, 2k+1) of row t by angle (t + offset) / theta^{2k/d}.
/// `direction` -1 applies the inverse rotation.
template <typename Derived>
Matrix<typename Derived::Scalar> rope_apply(const Eigen::MatrixBase<Derived>& x, double theta, Index offset = 0,
                                            int direction = 1) {
  using Scalar = typename Derived::Scalar;
  const Index d = x.cols();
  if (d % 2 != 0) throw DimensionError("rope_apply: head dim must be even, got " + std::to_string(d));
  if (!(theta > 0)) throw std::invalid_argument("rope_apply: theta must be positive");
  Matrix<Scalar> out(x.rows(), d);
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index k = 0; k < d / 2; ++k) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(d));
      const double angle = direction * static_cast<double>(t + offset) * freq;
      const Scalar c = static_cast<Scalar>(std::cos(angle));
      const Scalar s = static_cast<Scalar>(std::sin(angle));
      const Scalar a = x(t, 2 * k);
      const Scalar b = x(t, 2 * k + 1);
      out(t, 2 * k) = c * a - s * b;
      out(t, 2 * k + 1) = s * a + c * b;
    }
  }
  return out;
}

/// Per-position alpha for scalable softpick with effective length n_t = t + 1.
template <typename Scalar>
Vector<Scalar> scalable_row_scale(Scalar s_param, Index n, Index head_dim) {
  Vector<Scalar> out(n);
  for (Index t = 0; t < n; ++t) {
    out(t) = static_cast<Scalar>(scalable_scale(static_cast<double>(s_param), static_cast<double>(t + 1),
                                                static_cast<double>(head_dim)));
  }
  return out;
}

/// Forward state kept for the backward pass.
template <typename Scalar>
struct MhaCache {
  Matrix<Scalar> x;
  std::vector<Matrix<Scalar>> q, k, v, o;  // per head, q/k after RoPE
  std::vector<Vector<Scalar>> L;
  std::vector<RowMax<Scalar>> rowmax;
  std::vector<AttentionOptions<Scalar>> opts;
  Matrix<Scalar> context;  // concatenated head outputs
};

template <typename Scalar>
struct MhaOutput {
  Matrix<Scalar> y;
  Matrix<Scalar> context;             // per-head outputs before the output projection
  std::vector<Matrix<Scalar>> maps;   // one N x N map per head when captured
};

template <typename Scalar>
struct MhaGrads {
  Matrix<Scalar> dx;
  MhaWeights<Scalar> dw;
};

template <typename Scalar>
AttentionOptions<Scalar> head_options(const MhaConfig& cfg, const MhaWeights<Scalar>& w, Index head, Index n) {
  AttentionOptions<Scalar> opts;
  opts.scorer = cfg.scorer;
  opts.causal = true;
  opts.scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
  if (cfg.scale_mode == ScaleMode::Scalable) {
    opts.row_scale = scalable_row_scale<Scalar>(w.s_param(head), n, cfg.head_dim);
  }
  return opts;
}

/// Causal multi-head attention. Maps can only be captured through the
/// reference kernel.
template <typename Scalar>
MhaOutput<Scalar> mha_forward(const Matrix<Scalar>& x, const MhaWeights<Scalar>& w, const MhaConfig& cfg,
                              KernelKind kernel, MhaCache<Scalar>* cache = nullptr) {
  cfg.validate();
  const Index hidden = cfg.hidden();
  if (x.cols() != hidden || w.wq.rows() != hidden || w.wq.cols() != hidden) {
    throw DimensionError("mha_forward: input " + shape_string(x.rows(), x.cols()) + " / weights " +
                         shape_string(w.wq.rows(), w.wq.cols()) + " do not match hidden " +
                         std::to_string(hidden));
  }
  if (cfg.scale_mode == ScaleMode::Scalable && w.s_param.size() != cfg.n_heads) {
    throw DimensionError("mha_forward: s_param needs one entry per head");
  }
  if (cfg.capture_maps && kernel == KernelKind::Tiled) {
    throw std::invalid_argument("mha_forward: the tiled kernel cannot capture attention maps");
  }
  const Index n = x.rows();
  const Index d = cfg.head_dim;
  const Matrix<Scalar> q = x * w.wq;
  const Matrix<Scalar> k = x * w.wk;
  const Matrix<Scalar> v = x * w.wv;

  MhaOutput<Scalar> out;
  out.context.resize(n, hidden);
  if (cache) {
    cache->x = x;
    cache->q.assign(cfg.n_heads, {});
    cache->k.assign(cfg.n_heads, {});
    cache->v.assign(cfg.n_heads, {});
    cache->o.assign(cfg.n_heads, {});
    cache->L.assign(cfg.n_heads, {});
    cache->rowmax.assign(cfg.n_heads, {});
    cache->opts.assign(cfg.n_heads, {});
  }
  for (Index h = 0; h < cfg.n_heads; ++h) {
    Matrix<Scalar> qh = rope_apply(q.middleCols(h * d, d), cfg.rope_theta);
    Matrix<Scalar> kh = rope_apply(k.middleCols(h * d, d), cfg.rope_theta);
    Matrix<Scalar> vh = v.middleCols(h * d, d);
    auto opts = head_options(cfg, w, h, n);
    Matrix<Scalar> oh;
    Vector<Scalar> lh;
    RowMax<Scalar> mh;
    if (kernel == KernelKind::Reference) {
      auto ref = reference_attention(qh, kh, vh, opts);
      oh = std::move(ref.O);
      lh = std::move(ref.L);
      mh = std::move(ref.rowmax);
      if (cfg.capture_maps) out.maps.push_back(std::move(ref.A));
    } else {
      auto fl = flash_forward(qh, kh, vh, opts, cfg.block);
      oh = std::move(fl.O);
      lh = std::move(fl.L);
      mh = std::move(fl.rowmax);
    }
    out.context.middleCols(h * d, d) = oh;
    if (cache) {
      cache->q[h] = std::move(qh);
      cache->k[h] = std::move(kh);
      cache->v[h] = std::move(vh);
      cache->o[h] = std::move(oh);
      cache->L[h] = std::move(lh);
      cache->rowmax[h] = std::move(mh);
      cache->opts[h] = std::move(opts);
    }
  }
  out.y.noalias() = out.context * w.wo;
  if (cache) cache->context = out.context;
  return out;
}

/// Gradients of <dy, y> with respect to the layer input and every weight.
template <typename Scalar>
MhaGrads<Scalar> mha_backward(const Matrix<Scalar>& dy, const MhaWeights<Scalar>& w, const MhaConfig& cfg,
                              const MhaCache<Scalar>& cache) {
  const Index n = cache.x.rows();
  const Index d = cfg.head_dim;
  const Index hidden = cfg.hidden();
  if (dy.rows() != n || dy.cols() != hidden) {
    throw DimensionError("mha_backward: upstream gradient " + shape_string(dy.rows(), dy.cols()) +
                         " does not match output " + shape_string(n, hidden));
  }
  MhaGrads<Scalar> g;
  g.dw = MhaWeights<Scalar>::zeros(cfg);
  g.dw.wo.noalias() = cache.context.transpose() * dy;
  const Matrix<Scalar> d_context = dy * w.wo.transpose();

  Matrix<Scalar> dq(n, hidden), dk(n, hidden), dv(n, hidden);
  for (Index h = 0; h < cfg.n_heads; ++h) {
    const Matrix<Scalar> d_oh = d_context.middleCols(h * d, d);
    auto hg = flash_backward(cache.q[h], cache.k[h], cache.v[h], cache.o[h], d_oh, cache.L[h], cache.opts[h],
                             cfg.block, &cache.rowmax[h]);
    dq.middleCols(h * d, d) = rope_apply(hg.dQ, cfg.rope_theta, 0, -1);
    dk.middleCols(h * d, d) = rope_apply(hg.dK, cfg.rope_theta, 0, -1);
    dv.middleCols(h * d, d) = hg.dV;
    if (cfg.scale_mode == ScaleMode::Scalable) {
      // alpha_t = s * log(t + 1) / sqrt(d)
      Scalar ds = 0;
      for (Index t = 0; t < n; ++t) {
        ds += hg.d_row_scale(t) * static_cast<Scalar>(std::log(static_cast<double>(t + 1)) /
                                                       std::sqrt(static_cast<double>(d)));
      }
      g.dw.s_param(h) = ds;
    }
  }
  g.dw.wq.noalias() = cache.x.transpose() * dq;
  g.dw.wk.noalias() = cache.x.transpose() * dk;
  g.dw.wv.noalias() = cache.x.transpose() * dv;
  g.dx.noalias() = dq * w.wq.transpose();
  g.dx.noalias() += dk * w.wk.transpose();
  g.dx.noalias() += dv * w.wv.transpose();
  return g;
}

}  // namespace softpick
