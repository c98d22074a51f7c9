#include "softpick/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace softpick;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.head_dim = 8;
  cfg.vocab = 32;
  cfg.max_seq = 12;
  cfg.block = {4, 4};
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.warmup_steps = 2;
  tc.total_steps = 12;
  tc.batch = 2;
  tc.record_wall_time = false;
  tc.seed = 4;
  return tc;
}

std::vector<std::uint8_t> ramp_corpus(std::size_t n) {
  std::vector<std::uint8_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<std::uint8_t>((i * 7 + i / 5) % 32);
  return c;
}

}  // namespace

TEST_CASE("lr_at: warmup, peak, floor and cosine midpoint") {
  TrainConfig tc;
  tc.lr = 3e-4;
  tc.warmup_steps = 100;
  tc.total_steps = 1100;
  CHECK(lr_at(0, tc) == 0.0);
  CHECK(lr_at(50, tc) == doctest::Approx(1.5e-4).epsilon(1e-14));
  CHECK(lr_at(100, tc) == doctest::Approx(3e-4).epsilon(1e-14));
  CHECK(std::abs(lr_at(1100, tc) - 0.1 * 3e-4) <= 1e-12);
  // halfway through the decay the cosine term is 1/2
  CHECK(lr_at(600, tc) == doctest::Approx(0.1 * 3e-4 + 0.9 * 3e-4 * 0.5).epsilon(1e-12));
  for (std::int64_t s = 101; s <= 1100; ++s) CHECK(lr_at(s, tc) <= lr_at(s - 1, tc));
  CHECK_THROWS_AS((void)lr_at(-1, tc), std::out_of_range);
  CHECK_THROWS_AS((void)lr_at(1101, tc), std::out_of_range);
  tc.warmup_steps = 0;
  CHECK(lr_at(0, tc) == doctest::Approx(3e-4));
}

TEST_CASE("clip_global: below, above, direction") {
  const auto cfg = tiny_model();
  auto g = zeros_like(init_model<double>(cfg));
  g.embedding(0, 0) = 0.3;
  g.head(1, 2) = 0.4;
  auto small = g;
  CHECK(clip_global(small, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(small.embedding == g.embedding);
  CHECK(small.head == g.head);

  g.embedding(0, 0) = 2.4;
  g.head(1, 2) = 3.2;
  auto big = g;
  CHECK(clip_global(big, 1.0) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(std::abs(global_norm(big) - 1.0) <= 1e-9);
  const double dot = big.embedding(0, 0) * g.embedding(0, 0) + big.head(1, 2) * g.head(1, 2);
  CHECK(std::abs(dot / (global_norm(big) * global_norm(g)) - 1.0) <= 1e-12);
  CHECK_THROWS_AS((void)clip_global(big, 0.0), std::invalid_argument);
}

TEST_CASE("AdamW: one hand-computed step with decoupled decay") {
  TrainConfig tc;
  tc.beta1 = 0.9;
  tc.beta2 = 0.95;
  tc.adam_eps = 1e-8;
  tc.weight_decay = 0.1;
  double p = 1.0, g = 0.5, m = 0.0, v = 0.0;
  adamw_update(&p, &g, &m, &v, 1, 1, 0.1, tc, true);
  // m = 0.05, v = 0.0125; bias-corrected 0.5 and 0.25.
  CHECK(m == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(v == doctest::Approx(0.0125).epsilon(1e-15));
  const double expect = (1.0 - 0.1 * 0.1 * 1.0) - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(p == doctest::Approx(expect).epsilon(1e-15));

  // Coupled L2 (decay folded into the gradient) normalizes the decay away on step 1.
  const double g_l2 = 0.5 + 0.1 * 1.0;
  const double coupled = 1.0 - 0.1 * g_l2 / (std::sqrt(g_l2 * g_l2) + 1e-8);
  CHECK(std::abs(p - coupled) > 1e-3);

  double q = 1.0, gq = 0.5, mq = 0.0, vq = 0.0;
  adamw_update(&q, &gq, &mq, &vq, 1, 1, 0.1, tc, false);
  CHECK(q == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("decay applies to matrices, not to gains or s_param") {
  CHECK(decays("embedding"));
  CHECK(decays("layers.0.attn.wq"));
  CHECK(decays("head"));
  CHECK_FALSE(decays("layers.1.attn_norm"));
  CHECK_FALSE(decays("final_norm"));
  CHECK_FALSE(decays("layers.0.attn.s_param"));
}

TEST_CASE("train: metrics stream, checkpoints and determinism") {
  const auto cfg = tiny_model();
  const auto tc = tiny_train();
  const auto corpus = ramp_corpus(400);
  std::vector<std::int64_t> ckpts;
  TrainHooks<float> hooks;
  hooks.on_checkpoint = [&](std::int64_t s, const ModelState<float>&) { ckpts.push_back(s); };
  std::size_t seen = 0;
  hooks.on_metrics = [&](const MetricsRecord&) { ++seen; };
  const auto a = train<float>(cfg, init_model<float>(cfg), corpus, tc, hooks);
  const auto b = train<float>(cfg, init_model<float>(cfg), corpus, tc);
  REQUIRE(a.metrics.size() == 12);
  CHECK(seen == 12);
  CHECK(ckpts == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const auto& x = a.metrics[i];
    const auto& y = b.metrics[i];
    CHECK(x.step == static_cast<std::int64_t>(i + 1));
    CHECK(x.loss == y.loss);
    CHECK(x.grad_norm == y.grad_norm);
    CHECK(x.lr == y.lr);
    CHECK(x.tokens_seen == static_cast<std::int64_t>((i + 1) * 2 * 12));
    CHECK(x.wall_ms == 0.0);
    CHECK(x.grad_norm >= 0.0);
  }
  CHECK(a.state.head == b.state.head);
}

TEST_CASE("train: checkpoint cadence defaults to every tenth of the run") {
  auto tc = tiny_train();
  tc.total_steps = 25;
  std::vector<std::int64_t> ckpts;
  TrainHooks<float> hooks;
  hooks.on_checkpoint = [&](std::int64_t s, const ModelState<float>&) { ckpts.push_back(s); };
  const auto cfg = tiny_model();
  (void)train<float>(cfg, init_model<float>(cfg), ramp_corpus(200), tc, hooks);
  CHECK(ckpts == std::vector<std::int64_t>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 25});
}

TEST_CASE("train: grad_norm is recorded before clipping") {
  auto tc = tiny_train();
  tc.grad_clip = 1e-6;
  tc.total_steps = 3;
  const auto cfg = tiny_model();
  const auto r = train<float>(cfg, init_model<float>(cfg), ramp_corpus(200), tc);
  for (const auto& m : r.metrics) CHECK(m.grad_norm > 1e-6);
}

TEST_CASE("train: non-finite loss aborts with the offending record") {
  const auto cfg = tiny_model();
  auto state = init_model<float>(cfg);
  state.embedding.setConstant(std::numeric_limits<float>::quiet_NaN());
  try {
    (void)train<float>(cfg, state, ramp_corpus(200), tiny_train());
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.record.step == 1);
    CHECK_FALSE(std::isfinite(e.record.loss));
  }
}

TEST_CASE("train: input validation") {
  const auto cfg = tiny_model();
  auto tc = tiny_train();
  tc.warmup_steps = tc.total_steps;
  CHECK_THROWS_AS((void)train<float>(cfg, init_model<float>(cfg), ramp_corpus(100), tc), std::invalid_argument);
  std::vector<std::uint8_t> wide(100, 200);  // outside vocab 32
  CHECK_THROWS_AS((void)train<float>(cfg, init_model<float>(cfg), wide, tiny_train()), std::invalid_argument);
  tc = tiny_train();
  tc.min_lr_frac = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("BatchSampler: seeded windows inside the corpus") {
  const auto corpus = ramp_corpus(50);
  BatchSampler a(corpus, 12, 9), b(corpus, 12, 9);
  for (int i = 0; i < 100; ++i) {
    const auto w = a.next();
    CHECK(w == b.next());
    REQUIRE(w.size() == 12);
    bool found = false;
    for (std::size_t off = 0; off + 12 <= corpus.size() && !found; ++off) {
      found = std::equal(w.begin(), w.end(), corpus.begin() + static_cast<std::ptrdiff_t>(off));
    }
    CHECK(found);
  }
  const std::vector<std::uint8_t> five(5, 1);
  BatchSampler shortc(five, 12, 0);
  CHECK(shortc.window() == 5);
}
