#pragma once

#include "softpick/attention.hpp"
#include "softpick/numerics.hpp"
#include "softpick/scorers.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace softpick {

enum class DType { F32, F64 };

inline std::string_view to_string(DType t) { return t == DType::F32 ? "f32" : "f64"; }

/// Llama-style decoder: pre-norm RMSNorm, causal MHA with RoPE, SwiGLU MLP,
/// untied input embedding and output head.
struct ModelConfig {
  Index n_layers = 2;
  Index hidden = 128;
  Index n_heads = 4;
  Index head_dim = 32;
  double ffn_mult = 8.0 / 3.0;
  Index vocab = 256;
  Index max_seq = 256;
  ScorerKind scorer = ScorerKind::softpick();
  double rope_theta = 10000.0;
  std::uint64_t seed = 0;
  DType dtype = DType::F32;
  BlockSpec block{64, 64};
  double norm_eps = 1e-6;
  double init_std = 0.02;

  /// SwiGLU inner width, ffn_mult * hidden rounded up to a multiple of 8.
  Index ffn_inner() const {
    const double raw = ffn_mult * static_cast<double>(hidden);
    return 8 * static_cast<Index>(std::ceil(raw / 8.0 - 1e-9));
  }

  MhaConfig attention() const {
    MhaConfig cfg;
    cfg.n_heads = n_heads;
    cfg.head_dim = head_dim;
    cfg.rope_theta = rope_theta;
    cfg.scorer = scorer;
    cfg.scale_mode = scorer.tag == ScorerTag::ScalableSoftpick ? ScaleMode::Scalable : ScaleMode::InvSqrtDk;
    cfg.block = block;
    return cfg;
  }

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("model.n_layers must be >= 1");
    if (hidden != n_heads * head_dim) throw std::invalid_argument("model.hidden must equal n_heads * head_dim");
    if (vocab < 2) throw std::invalid_argument("model.vocab must be >= 2");
    if (max_seq < 2) throw std::invalid_argument("model.max_seq must be >= 2");
    if (!(ffn_mult > 0)) throw std::invalid_argument("model.ffn_mult must be positive");
    if (!(norm_eps > 0)) throw std::invalid_argument("model.norm_eps must be positive");
    if (!(init_std > 0)) throw std::invalid_argument("model.init_std must be positive");
    attention().validate();
  }
};

template <typename Scalar>
struct LayerWeights {
  Vector<Scalar> attn_norm;
  MhaWeights<Scalar> attn;
  Vector<Scalar> mlp_norm;
  Matrix<Scalar> w_gate, w_up;  // hidden x inner
  Matrix<Scalar> w_down;        // inner x hidden
};

template <typename Scalar>
struct ModelState {
  Matrix<Scalar> embedding;  // vocab x hidden
  std::vector<LayerWeights<Scalar>> layers;
  Vector<Scalar> final_norm;
  Matrix<Scalar> head;  // hidden x vocab
};

/// Visits every parameter in declaration order as (name, tensor). Empty
/// tensors (s_param outside scalable mode) are skipped.
template <typename State, typename Fn>
void for_each_parameter(State& state, Fn&& fn) {
  fn(std::string("embedding"), state.embedding);
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    auto& layer = state.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "attn_norm", layer.attn_norm);
    fn(p + "attn.wq", layer.attn.wq);
    fn(p + "attn.wk", layer.attn.wk);
    fn(p + "attn.wv", layer.attn.wv);
    fn(p + "attn.wo", layer.attn.wo);
    if (layer.attn.s_param.size() > 0) fn(p + "attn.s_param", layer.attn.s_param);
    fn(p + "mlp_norm", layer.mlp_norm);
    fn(p + "mlp.w_gate", layer.w_gate);
    fn(p + "mlp.w_up", layer.w_up);
    fn(p + "mlp.w_down", layer.w_down);
  }
  fn(std::string("final_norm"), state.final_norm);
  fn(std::string("head"), state.head);
}

/// Visits matching parameters of two identically shaped states as
/// (name, data_a, data_b, size).
template <typename StateA, typename StateB, typename Fn>
void for_each_parameter_pair(StateA& a, StateB& b, Fn&& fn) {
  using PtrA = decltype(a.embedding.data());
  std::vector<std::tuple<std::string, PtrA, Index>> pa;
  for_each_parameter(a, [&](const std::string& name, auto& t) { pa.emplace_back(name, t.data(), t.size()); });
  std::size_t i = 0;
  for_each_parameter(b, [&](const std::string& name, auto& t) {
    if (i >= pa.size() || std::get<0>(pa[i]) != name || std::get<2>(pa[i]) != t.size()) {
      throw DimensionError("parameter layout mismatch at " + name);
    }
    fn(name, std::get<1>(pa[i]), t.data(), t.size());
    ++i;
  });
  if (i != pa.size()) throw DimensionError("parameter layout mismatch: differing parameter counts");
}

template <typename Scalar>
ModelState<Scalar> zeros_like(const ModelState<Scalar>& s) {
  ModelState<Scalar> z = s;
  for_each_parameter(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

template <typename To, typename From>
ModelState<To> cast_state(const ModelState<From>& s) {
  ModelState<To> out;
  out.embedding = s.embedding.template cast<To>();
  for (const auto& l : s.layers) {
    LayerWeights<To> t;
    t.attn_norm = l.attn_norm.template cast<To>();
    t.attn.wq = l.attn.wq.template cast<To>();
    t.attn.wk = l.attn.wk.template cast<To>();
    t.attn.wv = l.attn.wv.template cast<To>();
    t.attn.wo = l.attn.wo.template cast<To>();
    t.attn.s_param = l.attn.s_param.template cast<To>();
    t.mlp_norm = l.mlp_norm.template cast<To>();
    t.w_gate = l.w_gate.template cast<To>();
    t.w_up = l.w_up.template cast<To>();
    t.w_down = l.w_down.template cast<To>();
    out.layers.push_back(std::move(t));
  }
  out.final_norm = s.final_norm.template cast<To>();
  out.head = s.head.template cast<To>();
  return out;
}

/// normal(0, init_std) everywhere; wo and w_down additionally scaled by
/// 1/sqrt(2 n_layers); norm gains 1; scalable s_param from the scorer (1.0).
template <typename Scalar>
ModelState<Scalar> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Index h = cfg.hidden;
  const Index inner = cfg.ffn_inner();
  const double base_std = cfg.init_std;
  const double resid_std = base_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  ModelState<Scalar> s;
  s.embedding = randn<Scalar>(rng, cfg.vocab, h, base_std);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    LayerWeights<Scalar> w;
    w.attn_norm = Vector<Scalar>::Ones(h);
    w.attn.wq = randn<Scalar>(rng, h, h, base_std);
    w.attn.wk = randn<Scalar>(rng, h, h, base_std);
    w.attn.wv = randn<Scalar>(rng, h, h, base_std);
    w.attn.wo = randn<Scalar>(rng, h, h, resid_std);
    if (cfg.scorer.tag == ScorerTag::ScalableSoftpick) {
      w.attn.s_param = Vector<Scalar>::Constant(cfg.n_heads, static_cast<Scalar>(cfg.scorer.s_param.value_or(1.0)));
    }
    w.mlp_norm = Vector<Scalar>::Ones(h);
    w.w_gate = randn<Scalar>(rng, h, inner, base_std);
    w.w_up = randn<Scalar>(rng, h, inner, base_std);
    w.w_down = randn<Scalar>(rng, inner, h, resid_std);
    s.layers.push_back(std::move(w));
  }
  s.final_norm = Vector<Scalar>::Ones(h);
  s.head = randn<Scalar>(rng, h, cfg.vocab, base_std);
  return s;
}

// ---------------------------------------------------------------------------
// RMSNorm and SwiGLU pieces

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> x;
  Vector<Scalar> inv_rms;
};

template <typename Scalar>
Matrix<Scalar> rmsnorm_forward(const Matrix<Scalar>& x, const Vector<Scalar>& gain, double eps,
                               NormCache<Scalar>* cache = nullptr) {
  const Vector<Scalar> inv = ((x.array().square().rowwise().sum() / static_cast<Scalar>(x.cols())) +
                              static_cast<Scalar>(eps))
                                 .rsqrt();
  Matrix<Scalar> y = (x.array().colwise() * inv.array()).rowwise() * gain.transpose().array();
  if (cache) {
    cache->x = x;
    cache->inv_rms = inv;
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> rmsnorm_backward(const Matrix<Scalar>& dy, const Vector<Scalar>& gain, const NormCache<Scalar>& c,
                                Vector<Scalar>& d_gain) {
  const auto& x = c.x;
  const auto& inv = c.inv_rms;
  d_gain += ((dy.array() * x.array()).colwise() * inv.array()).colwise().sum().transpose().matrix();
  const Matrix<Scalar> gdy = dy.array().rowwise() * gain.transpose().array();
  const Vector<Scalar> proj = (gdy.array() * x.array()).rowwise().sum();
  const Vector<Scalar> coef = proj.array() * inv.array().cube() / static_cast<Scalar>(x.cols());
  Matrix<Scalar> dx = (gdy.array().colwise() * inv.array()) - (x.array().colwise() * coef.array());
  return dx;
}

template <typename Scalar>
inline Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Forward / backward

struct Capture {
  bool hidden = false;
  bool maps = false;
  bool head_outputs = false;

  static Capture none() { return {}; }
  static Capture hidden_states() { return {true, false, false}; }
  static Capture everything() { return {true, true, true}; }
};

template <typename Scalar>
using HiddenTrace = std::vector<Matrix<Scalar>>;

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;                            // N x vocab
  HiddenTrace<Scalar> hidden;                       // per layer, N x hidden, after the block
  std::vector<std::vector<Matrix<Scalar>>> maps;    // [layer][head], N x N
  std::vector<Matrix<Scalar>> head_outputs;         // [layer], N x hidden, before wo
};

template <typename Scalar>
struct LayerCache {
  NormCache<Scalar> norm1, norm2;
  MhaCache<Scalar> attn;
  Matrix<Scalar> h2, gate, up, act;
};

template <typename Scalar>
struct ModelCache {
  std::vector<int> tokens;
  std::vector<LayerCache<Scalar>> layers;
  NormCache<Scalar> final_norm;
  Matrix<Scalar> final_hidden;
};

inline void check_tokens(std::span<const int> tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("model: empty token sequence");
  if (static_cast<Index>(tokens.size()) > cfg.max_seq) {
    throw std::invalid_argument("model: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                                std::to_string(cfg.max_seq));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab) {
      throw std::out_of_range("model: token id " + std::to_string(t) + " outside vocab of " +
                              std::to_string(cfg.vocab));
    }
  }
}

/// Runs the decoder. Capturing maps switches attention to the reference
/// kernel; everything else uses `kernel`.
template <typename Scalar>
ForwardResult<Scalar> model_forward(std::span<const int> tokens, const ModelState<Scalar>& state,
                                    const ModelConfig& cfg, Capture capture = {},
                                    ModelCache<Scalar>* cache = nullptr, KernelKind kernel = KernelKind::Tiled) {
  check_tokens(tokens, cfg);
  const Index n = static_cast<Index>(tokens.size());
  MhaConfig mcfg = cfg.attention();
  if (capture.maps) {
    kernel = KernelKind::Reference;
    mcfg.capture_maps = true;
  }

  Matrix<Scalar> x(n, cfg.hidden);
  for (Index t = 0; t < n; ++t) x.row(t) = state.embedding.row(tokens[static_cast<std::size_t>(t)]);

  ForwardResult<Scalar> out;
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.assign(state.layers.size(), {});
  }
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& w = state.layers[l];
    LayerCache<Scalar>* lc = cache ? &cache->layers[l] : nullptr;

    const Matrix<Scalar> h1 = rmsnorm_forward(x, w.attn_norm, cfg.norm_eps, lc ? &lc->norm1 : nullptr);
    auto attn = mha_forward(h1, w.attn, mcfg, kernel, lc ? &lc->attn : nullptr);
    x += attn.y;

    Matrix<Scalar> h2 = rmsnorm_forward(x, w.mlp_norm, cfg.norm_eps, lc ? &lc->norm2 : nullptr);
    Matrix<Scalar> gate = h2 * w.w_gate;
    Matrix<Scalar> up = h2 * w.w_up;
    Matrix<Scalar> act = gate.unaryExpr([](Scalar g) { return g * sigmoid(g); }).cwiseProduct(up);
    x.noalias() += act * w.w_down;

    if (lc) {
      lc->h2 = std::move(h2);
      lc->gate = std::move(gate);
      lc->up = std::move(up);
      lc->act = std::move(act);
    }
    if (capture.hidden) out.hidden.push_back(x);
    if (capture.maps) out.maps.push_back(std::move(attn.maps));
    if (capture.head_outputs) out.head_outputs.push_back(std::move(attn.context));
  }
  const Matrix<Scalar> hf = rmsnorm_forward(x, state.final_norm, cfg.norm_eps, cache ? &cache->final_norm : nullptr);
  out.logits.noalias() = hf * state.head;
  if (cache) cache->final_hidden = hf;
  return out;
}

template <typename Scalar>
struct LossAndGrads {
  double loss = 0;
  ModelState<Scalar> grads;
};

/// Mean next-token cross-entropy over positions 0..N-2 and its gradient with
/// respect to the logits.
template <typename Scalar>
double cross_entropy(const Matrix<Scalar>& logits, std::span<const int> tokens, Matrix<Scalar>* d_logits) {
  const Index n = logits.rows();
  const Index count = n - 1;
  if (d_logits) d_logits->setZero(n, logits.cols());
  double total = 0;
  for (Index t = 0; t < count; ++t) {
    const int target = tokens[static_cast<std::size_t>(t + 1)];
    const Scalar m = logits.row(t).maxCoeff();
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (logits.row(t).array() - m).exp();
    const Scalar z = e.sum();
    total += static_cast<double>(std::log(z) + m - logits(t, target));
    if (d_logits) {
      d_logits->row(t) = (e / (z * static_cast<Scalar>(count))).matrix();
      (*d_logits)(t, target) -= Scalar(1) / static_cast<Scalar>(count);
    }
  }
  return total / static_cast<double>(count);
}

/// Backpropagates d_logits through a cached forward pass; gradients are
/// accumulated into `grads`.
template <typename Scalar>
void model_backward(const Matrix<Scalar>& d_logits, const ModelState<Scalar>& state, const ModelConfig& cfg,
                    const ModelCache<Scalar>& cache, ModelState<Scalar>& grads) {
  const MhaConfig mcfg = cfg.attention();
  grads.head.noalias() += cache.final_hidden.transpose() * d_logits;
  Matrix<Scalar> dx = rmsnorm_backward(Matrix<Scalar>(d_logits * state.head.transpose()), state.final_norm,
                                       cache.final_norm, grads.final_norm);

  for (std::size_t li = state.layers.size(); li-- > 0;) {
    const auto& w = state.layers[li];
    const auto& lc = cache.layers[li];
    auto& gw = grads.layers[li];

    // MLP branch: x += (silu(gate) * up) * w_down
    gw.w_down.noalias() += lc.act.transpose() * dx;
    const Matrix<Scalar> d_act = dx * w.w_down.transpose();
    Matrix<Scalar> d_gate(lc.gate.rows(), lc.gate.cols());
    Matrix<Scalar> d_up(lc.gate.rows(), lc.gate.cols());
    for (Index i = 0; i < lc.gate.size(); ++i) {
      const Scalar g = lc.gate.data()[i];
      const Scalar sg = sigmoid(g);
      const Scalar silu = g * sg;
      d_up.data()[i] = d_act.data()[i] * silu;
      d_gate.data()[i] = d_act.data()[i] * lc.up.data()[i] * sg * (Scalar(1) + g * (Scalar(1) - sg));
    }
    gw.w_gate.noalias() += lc.h2.transpose() * d_gate;
    gw.w_up.noalias() += lc.h2.transpose() * d_up;
    Matrix<Scalar> dh2 = d_gate * w.w_gate.transpose();
    dh2.noalias() += d_up * w.w_up.transpose();
    dx += rmsnorm_backward(dh2, w.mlp_norm, lc.norm2, gw.mlp_norm);

    // Attention branch: x += mha(rmsnorm(x))
    auto ag = mha_backward(dx, w.attn, mcfg, lc.attn);
    gw.attn.wq += ag.dw.wq;
    gw.attn.wk += ag.dw.wk;
    gw.attn.wv += ag.dw.wv;
    gw.attn.wo += ag.dw.wo;
    if (gw.attn.s_param.size() > 0) gw.attn.s_param += ag.dw.s_param;
    dx += rmsnorm_backward(ag.dx, w.attn_norm, lc.norm1, gw.attn_norm);
  }
  for (std::size_t t = 0; t < cache.tokens.size(); ++t) {
    grads.embedding.row(cache.tokens[t]) += dx.row(static_cast<Index>(t));
  }
}

template <typename Scalar>
LossAndGrads<Scalar> loss_and_grads(std::span<const int> tokens, const ModelState<Scalar>& state,
                                    const ModelConfig& cfg, KernelKind kernel = KernelKind::Tiled) {
  if (tokens.size() < 2) throw std::invalid_argument("loss_and_grads: need at least 2 tokens");
  ModelCache<Scalar> cache;
  const auto fwd = model_forward(tokens, state, cfg, Capture::none(), &cache, kernel);
  Matrix<Scalar> d_logits;
  LossAndGrads<Scalar> out;
  out.loss = cross_entropy(fwd.logits, tokens, &d_logits);
  out.grads = zeros_like(state);
  model_backward(d_logits, state, cfg, cache, out.grads);
  return out;
}

template <typename Scalar>
double sequence_loss(std::span<const int> tokens, const ModelState<Scalar>& state, const ModelConfig& cfg,
                     KernelKind kernel = KernelKind::Tiled) {
  const auto fwd = model_forward<Scalar>(tokens, state, cfg, Capture::none(), nullptr, kernel);
  return cross_entropy<Scalar>(fwd.logits, tokens, nullptr);
}

}  // namespace softpick
