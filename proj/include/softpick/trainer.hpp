#pragma once

#include "softpick/model.hpp"
#include "softpick/numerics.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace softpick {

struct TrainConfig {
  double lr = 3e-4;
  std::int64_t warmup_steps = 100;
  std::int64_t total_steps = 2000;
  double min_lr_frac = 0.10;
  std::int64_t batch = 8;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: every 10% of total_steps
  bool record_wall_time = true;

  std::int64_t checkpoint_interval() const {
    if (checkpoint_every > 0) return checkpoint_every;
    return std::max<std::int64_t>(1, total_steps / 10);
  }

  void validate() const {
    if (!(lr > 0)) throw std::invalid_argument("train.lr must be positive");
    if (!(min_lr_frac > 0 && min_lr_frac <= 1)) throw std::invalid_argument("train.min_lr_frac must be in (0, 1]");
    if (total_steps < 1) throw std::invalid_argument("train.total_steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
      throw std::invalid_argument("train.warmup_steps must be in [0, total_steps)");
    }
    if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (!(grad_clip > 0)) throw std::invalid_argument("train.grad_clip must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw std::invalid_argument("train.beta1/beta2 must be in [0, 1)");
    }
    if (!(weight_decay >= 0)) throw std::invalid_argument("train.weight_decay must be >= 0");
    if (!(adam_eps > 0)) throw std::invalid_argument("train.adam_eps must be positive");
  }
};

struct MetricsRecord {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;  // global L2 before clipping
  std::int64_t tokens_seen = 0;
  double wall_ms = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const MetricsRecord& rec, const std::string& what) : std::runtime_error(what), record(rec) {}
  MetricsRecord record;
};

/// Linear warmup from 0 to lr, then cosine decay to min_lr_frac * lr at total_steps.
inline double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw std::out_of_range("lr_at: step outside [0, total_steps]");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  const double min_lr = cfg.min_lr_frac * cfg.lr;
  return min_lr + (cfg.lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <typename Scalar>
double global_norm(const ModelState<Scalar>& grads) {
  double sq = 0;
  for_each_parameter(grads, [&](const std::string&, const auto& t) {
    for (Index i = 0; i < t.size(); ++i) {
      const double g = static_cast<double>(t.data()[i]);
      sq += g * g;
    }
  });
  return std::sqrt(sq);
}

/// Rescales all gradients to norm max_norm when their global norm exceeds it.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_global(ModelState<Scalar>& grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for_each_parameter(grads, [&](const std::string&, auto& t) { t *= factor; });
  }
  return norm;
}

/// Matrices (embedding, projections, head) are decayed; gains and s_param are not.
inline bool decays(const std::string& name) {
  return name.find("norm") == std::string::npos && name.find("s_param") == std::string::npos;
}

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Scalar>
void adamw_update(Scalar* param, const Scalar* grad, Scalar* m, Scalar* v, Index n, std::int64_t step, double lr,
                  const TrainConfig& cfg, bool decay) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (Index i = 0; i < n; ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<Scalar>(mi);
    v[i] = static_cast<Scalar>(vi);
    double p = static_cast<double>(param[i]);
    p -= lr * wd * p;
    p -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
    param[i] = static_cast<Scalar>(p);
  }
}

template <typename Scalar>
struct OptState {
  ModelState<Scalar> m, v;
  std::int64_t step = 0;

  explicit OptState(const ModelState<Scalar>& like) : m(zeros_like(like)), v(zeros_like(like)) {}
};

template <typename Scalar>
void adamw_step(ModelState<Scalar>& params, const ModelState<Scalar>& grads, OptState<Scalar>& opt, double lr,
                const TrainConfig& cfg) {
  ++opt.step;
  std::vector<std::pair<Scalar*, Scalar*>> moments;
  for_each_parameter_pair(opt.m, opt.v, [&](const std::string&, Scalar* m, Scalar* v, Index) {
    moments.emplace_back(m, v);
  });
  std::size_t i = 0;
  for_each_parameter_pair(params, grads, [&](const std::string& name, Scalar* p, const Scalar* g, Index n) {
    adamw_update(p, g, moments[i].first, moments[i].second, n, opt.step, lr, cfg, decays(name));
    ++i;
  });
}

/// Contiguous windows at seeded random offsets.
class BatchSampler {
 public:
  BatchSampler(std::span<const std::uint8_t> corpus, Index window, std::uint64_t seed)
      : corpus_(corpus), window_(std::min<Index>(window, static_cast<Index>(corpus.size()))), rng_(seed) {
    if (corpus.size() < 2) throw std::invalid_argument("corpus must contain at least 2 bytes");
  }

  Index window() const { return window_; }

  std::vector<int> next() {
    const auto span = static_cast<std::uint64_t>(static_cast<Index>(corpus_.size()) - window_ + 1);
    const auto offset = static_cast<std::size_t>(rng_.uniform_int(span));
    return {corpus_.begin() + static_cast<std::ptrdiff_t>(offset),
            corpus_.begin() + static_cast<std::ptrdiff_t>(offset) + window_};
  }

 private:
  std::span<const std::uint8_t> corpus_;
  Index window_;
  Rng rng_;
};

template <typename Scalar>
struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(std::int64_t step, const ModelState<Scalar>&)> on_checkpoint;
};

template <typename Scalar>
struct TrainResult {
  ModelState<Scalar> state;
  std::vector<MetricsRecord> metrics;
};

/// AdamW training on byte windows of length min(max_seq, corpus size). One
/// MetricsRecord per optimizer step; checkpoints at step 0, every
/// checkpoint_interval() steps and at the final step.
template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& mcfg, ModelState<Scalar> state, std::span<const std::uint8_t> corpus,
                          const TrainConfig& tcfg, const TrainHooks<Scalar>& hooks = {}) {
  mcfg.validate();
  tcfg.validate();
  for (std::uint8_t b : corpus) {
    if (static_cast<Index>(b) >= mcfg.vocab) {
      throw std::invalid_argument("corpus byte " + std::to_string(b) + " outside vocab of " +
                                  std::to_string(mcfg.vocab));
    }
  }
  BatchSampler sampler(corpus, mcfg.max_seq, tcfg.seed);
  OptState<Scalar> opt(state);
  TrainResult<Scalar> result;
  const auto interval = tcfg.checkpoint_interval();
  if (hooks.on_checkpoint) hooks.on_checkpoint(0, state);

  std::int64_t tokens_seen = 0;
  for (std::int64_t step = 1; step <= tcfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelState<Scalar> grads = zeros_like(state);
    double loss = 0;
    for (std::int64_t b = 0; b < tcfg.batch; ++b) {
      const auto tokens = sampler.next();
      auto lg = loss_and_grads<Scalar>(tokens, state, mcfg);
      loss += lg.loss;
      for_each_parameter_pair(grads, lg.grads, [](const std::string&, Scalar* acc, const Scalar* g, Index n) {
        for (Index i = 0; i < n; ++i) acc[i] += g[i];
      });
      tokens_seen += static_cast<std::int64_t>(tokens.size());
    }
    const auto inv_batch = static_cast<Scalar>(1.0 / static_cast<double>(tcfg.batch));
    for_each_parameter(grads, [&](const std::string&, auto& t) { t *= inv_batch; });
    loss /= static_cast<double>(tcfg.batch);

    MetricsRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, tcfg);
    rec.loss = loss;
    rec.tokens_seen = tokens_seen;
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(rec, "non-finite loss at step " + std::to_string(step));
    }
    rec.grad_norm = clip_global(grads, tcfg.grad_clip);
    adamw_step(state, grads, opt, rec.lr, tcfg);
    if (tcfg.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    result.metrics.push_back(rec);
    if (hooks.on_metrics) hooks.on_metrics(rec);
    if (hooks.on_checkpoint && (step % interval == 0 || step == tcfg.total_steps)) hooks.on_checkpoint(step, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace softpick
