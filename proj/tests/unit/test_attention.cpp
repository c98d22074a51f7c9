#include "softpick/attention.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace softpick;
using oracle::MatD;

namespace {

MhaConfig small_cfg(ScorerKind scorer, Index heads = 2, Index d = 8) {
  MhaConfig cfg;
  cfg.n_heads = heads;
  cfg.head_dim = d;
  cfg.scorer = scorer;
  cfg.scale_mode = scorer.tag == ScorerTag::ScalableSoftpick ? ScaleMode::Scalable : ScaleMode::InvSqrtDk;
  cfg.block = {5, 5};
  return cfg;
}

MhaWeights<double> random_weights(Rng& rng, const MhaConfig& cfg, double std) {
  const Index h = cfg.hidden();
  MhaWeights<double> w;
  w.wq = randn<double>(rng, h, h, std);
  w.wk = randn<double>(rng, h, h, std);
  w.wv = randn<double>(rng, h, h, std);
  w.wo = randn<double>(rng, h, h, std);
  if (cfg.scale_mode == ScaleMode::Scalable) w.s_param = Vector<double>::Constant(cfg.n_heads, 1.0);
  return w;
}

// <G, y> as a function of everything mha_forward depends on.
double probe(const MatD& x, const MhaWeights<double>& w, const MhaConfig& cfg, const MatD& g) {
  return (mha_forward(x, w, cfg, KernelKind::Reference).y.array() * g.array()).sum();
}

}  // namespace

TEST_CASE("rope: identity at position 0, norm preserving, odd dim rejected") {
  Rng rng(41);
  const MatD x = randn<double>(rng, 9, 8);
  const MatD r = rope_apply(x, 10000.0);
  CHECK(r.row(0) == x.row(0));
  for (Index t = 0; t < 9; ++t) {
    for (Index k = 0; k < 4; ++k) {
      CHECK(r.row(t).segment(2 * k, 2).norm() == doctest::Approx(x.row(t).segment(2 * k, 2).norm()).epsilon(1e-12));
    }
    CHECK(std::abs(r.row(t).norm() - x.row(t).norm()) <= 1e-12);
  }
  CHECK_THROWS_AS((void)rope_apply(MatD::Zero(2, 3), 10000.0), DimensionError);
  CHECK(rope_apply(r, 10000.0, 0, -1).isApprox(x, 1e-14));
}

TEST_CASE("rope: scores depend only on relative position") {
  Rng rng(42);
  const Index n = 12, d = 8;
  const MatD q1 = randn<double>(rng, 1, d), k1 = randn<double>(rng, 1, d);
  const MatD q = q1.replicate(n, 1), k = k1.replicate(n, 1);
  const MatD rq = rope_apply(q, 10000.0), rk = rope_apply(k, 10000.0);
  for (Index t = 0; t < 5; ++t) {
    for (Index s = 0; s < 5; ++s) {
      for (Index delta = 1; delta < 6; ++delta) {
        const double base = rq.row(t).dot(rk.row(s));
        const double moved = rq.row(t + delta).dot(rk.row(s + delta));
        CHECK(std::abs(base - moved) <= 1e-9);
      }
    }
  }
}

TEST_CASE("mha_forward: reference and tiled kernels agree") {
  Rng rng(43);
  for (auto scorer : {ScorerKind::softpick(), ScorerKind::softmax(), ScorerKind::scalable()}) {
    const auto cfg = small_cfg(scorer, 2, 8);
    const auto w = random_weights(rng, cfg, 0.4);
    const MatD x = randn<double>(rng, 13, 16);
    const auto ref = mha_forward(x, w, cfg, KernelKind::Reference);
    const auto tiled = mha_forward(x, w, cfg, KernelKind::Tiled);
    CHECK((ref.y - tiled.y).cwiseAbs().maxCoeff() <= 1e-10);

    MhaWeights<float> wf{w.wq.cast<float>(), w.wk.cast<float>(), w.wv.cast<float>(), w.wo.cast<float>(),
                         w.s_param.cast<float>()};
    const auto tf = mha_forward<float>(x.cast<float>(), wf, cfg, KernelKind::Tiled);
    CHECK((tf.y.cast<double>() - ref.y).cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("mha_forward: map capture only through the reference kernel") {
  Rng rng(44);
  auto cfg = small_cfg(ScorerKind::softpick());
  cfg.capture_maps = true;
  const auto w = random_weights(rng, cfg, 0.4);
  const MatD x = randn<double>(rng, 10, 16);
  CHECK_THROWS_AS((void)mha_forward(x, w, cfg, KernelKind::Tiled), std::invalid_argument);
  const auto out = mha_forward(x, w, cfg, KernelKind::Reference);
  REQUIRE(out.maps.size() == 2);
  for (const auto& map : out.maps) {
    CHECK(map.minCoeff() >= 0);
    for (Index i = 0; i < 10; ++i) {
      CHECK(map.row(i).sum() <= 1.0 + 1e-12);
      for (Index j = i + 1; j < 10; ++j) CHECK(map(i, j) == 0.0);
    }
  }
}

TEST_CASE("mha_forward: a query with only nonpositive scores outputs zero for that head") {
  const auto cfg = small_cfg(ScorerKind::softpick(), 1, 2);
  MhaWeights<double> w = MhaWeights<double>::zeros(cfg);
  w.wq = MatD::Identity(2, 2);
  w.wk = -MatD::Identity(2, 2);
  w.wv = MatD::Identity(2, 2);
  w.wo = MatD::Identity(2, 2);
  MatD x(1, 2);
  x << 0.7, -0.3;
  const auto out = mha_forward(x, w, cfg, KernelKind::Reference);
  CHECK(out.context.isZero(0));
  CHECK(out.y.isZero(0));
}

TEST_CASE("mha_forward: scalable mode at N = 1 yields a zero row") {
  Rng rng(45);
  const auto cfg = small_cfg(ScorerKind::scalable(1.0));
  const auto w = random_weights(rng, cfg, 1.0);
  const MatD x = randn<double>(rng, 1, 16);
  const auto out = mha_forward(x, w, cfg, KernelKind::Reference);
  CHECK(out.y.isZero(0));
  const auto alpha = scalable_row_scale<double>(1.0, 4, 16);
  CHECK(alpha(0) == 0.0);
  CHECK(alpha(3) == doctest::Approx(std::log(4.0) / 4.0));
}

TEST_CASE("mha_backward: zero upstream gradient gives zero gradients") {
  Rng rng(46);
  const auto cfg = small_cfg(ScorerKind::scalable());
  const auto w = random_weights(rng, cfg, 0.4);
  const MatD x = randn<double>(rng, 8, 16);
  MhaCache<double> cache;
  (void)mha_forward(x, w, cfg, KernelKind::Tiled, &cache);
  const auto g = mha_backward(MatD(MatD::Zero(8, 16)), w, cfg, cache);
  CHECK(g.dx.isZero(0));
  CHECK(g.dw.wq.isZero(0));
  CHECK(g.dw.wk.isZero(0));
  CHECK(g.dw.wv.isZero(0));
  CHECK(g.dw.wo.isZero(0));
  CHECK(g.dw.s_param.isZero(0));
}

TEST_CASE("mha_backward vs central differences (2 heads, N = 16, hidden = 16)") {
  for (auto scorer : {ScorerKind::softpick(), ScorerKind::softmax(), ScorerKind::scalable()}) {
    Rng rng(47);
    const auto cfg = small_cfg(scorer, 2, 8);
    auto w = random_weights(rng, cfg, 0.5);
    MatD x = randn<double>(rng, 16, 16);
    const MatD g = randn<double>(rng, 16, 16);
    MhaCache<double> cache;
    (void)mha_forward(x, w, cfg, KernelKind::Tiled, &cache);
    const auto an = mha_backward(g, w, cfg, cache);

    const double h = 1e-6;
    auto f = [&] { return probe(x, w, cfg, g); };
    CHECK(oracle::rel_err(an.dx, oracle::fd_gradient(f, x, h)) <= 1e-4);
    CHECK(oracle::rel_err(an.dw.wq, oracle::fd_gradient(f, w.wq, h)) <= 1e-4);
    CHECK(oracle::rel_err(an.dw.wk, oracle::fd_gradient(f, w.wk, h)) <= 1e-4);
    CHECK(oracle::rel_err(an.dw.wv, oracle::fd_gradient(f, w.wv, h)) <= 1e-4);
    CHECK(oracle::rel_err(an.dw.wo, oracle::fd_gradient(f, w.wo, h)) <= 1e-4);
    if (cfg.scale_mode == ScaleMode::Scalable) {
      MatD s = w.s_param;
      auto fs = [&] {
        w.s_param = s.col(0);
        return probe(x, w, cfg, g);
      };
      const MatD fd = oracle::fd_gradient(fs, s, h);
      w.s_param = s.col(0);
      CHECK(an.dw.s_param.cwiseAbs().maxCoeff() > 0);
      CHECK(oracle::rel_err(MatD(an.dw.s_param), fd) <= 1e-4);
    }
  }
}

TEST_CASE("head independence: zeroing one head's value block only removes that head") {
  Rng rng(48);
  const auto cfg = small_cfg(ScorerKind::softpick(), 2, 8);
  const auto w = random_weights(rng, cfg, 0.4);
  const MatD x = randn<double>(rng, 11, 16);
  const auto base = mha_forward(x, w, cfg, KernelKind::Reference);
  auto w2 = w;
  w2.wv.middleCols(8, 8).setZero();
  const auto cut = mha_forward(x, w2, cfg, KernelKind::Reference);
  CHECK(cut.context.leftCols(8) == base.context.leftCols(8));
  CHECK(cut.context.rightCols(8).isZero(0));
  const MatD head0_only = base.context.leftCols(8) * w.wo.topRows(8);
  CHECK((cut.y - head0_only).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("MhaConfig validation") {
  auto cfg = small_cfg(ScorerKind::softpick());
  cfg.head_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg(ScorerKind::softpick());
  cfg.scale_mode = ScaleMode::Scalable;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg(ScorerKind::softpick());
  cfg.rope_theta = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
