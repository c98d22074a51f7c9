#include "softpick/analysis.hpp"
#include "softpick/flash.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace softpick;
using oracle::MatD;

namespace {

MatD alpha_fixture() {
  MatD a(2, 2);
  a << 0.5, 0.1, 0.25, 0.05;
  return a;
}

// One sample whose map for (l, h) has constant first column alpha(l, h).
LayerHeadMaps<double> maps_with_first_column(const MatD& alpha, Index n) {
  LayerHeadMaps<double> maps(static_cast<std::size_t>(alpha.rows()));
  for (Index l = 0; l < alpha.rows(); ++l) {
    for (Index h = 0; h < alpha.cols(); ++h) {
      MatD m = MatD::Zero(n, n);
      m.col(0).setConstant(alpha(l, h));
      maps[static_cast<std::size_t>(l)].push_back(m);
    }
  }
  return maps;
}

}  // namespace

TEST_CASE("sink rate: hand fixture, zero column, saturated heads") {
  const auto r = sink_rate_from_alpha(alpha_fixture(), {0.2});
  CHECK(r.rates[0] == 0.5);
  CHECK(r.rate_at(0.2) == 0.5);
  CHECK_THROWS_AS((void)r.rate_at(0.3), std::out_of_range);

  const std::vector<LayerHeadMaps<double>> samples{maps_with_first_column(alpha_fixture(), 4)};
  const auto from_maps = sink_rate(samples, {0.2, 0.3});
  CHECK(from_maps.rate_at(0.2) == 0.5);
  CHECK(from_maps.rate_at(0.3) == 0.25);
  CHECK(from_maps.alpha1.isApprox(alpha_fixture(), 1e-15));

  const std::vector<LayerHeadMaps<double>> zero{maps_with_first_column(MatD::Zero(3, 4), 5)};
  CHECK(sink_rate(zero).rate_at(0.2) == 0.0);
  CHECK(sink_rate(zero).rate_at(0.3) == 0.0);
  const std::vector<LayerHeadMaps<double>> ones{maps_with_first_column(MatD::Ones(3, 4), 5)};
  CHECK(sink_rate(ones).rate_at(0.2) == 1.0);
  CHECK(sink_rate(ones).rate_at(0.3) == 1.0);

  CHECK_THROWS_AS((void)sink_rate(std::vector<LayerHeadMaps<double>>{}), std::invalid_argument);
}

TEST_CASE("sink rate: first column averaged over rows and samples") {
  MatD m1 = MatD::Zero(2, 2), m2 = MatD::Zero(2, 2);
  m1(0, 0) = 1.0;  // rows average to 0.5
  m2(0, 0) = 0.2;
  m2(1, 0) = 0.2;
  const std::vector<LayerHeadMaps<double>> samples{{{m1}}, {{m2}}};
  const auto r = sink_rate(samples, {0.3, 0.4});
  CHECK(r.alpha1(0, 0) == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(r.rate_at(0.3) == 1.0);
  CHECK(r.rate_at(0.4) == 0.0);
}

TEST_CASE("sink rate is invariant under permuting heads within a layer") {
  Rng rng(51);
  MatD alpha = randn<double>(rng, 3, 6).cwiseAbs() * 0.3;
  const auto base = sink_rate_from_alpha(alpha, kDefaultSinkThresholds);
  MatD swapped = alpha;
  swapped.col(0).swap(swapped.col(5));
  swapped.row(1).reverseInPlace();
  const auto perm = sink_rate_from_alpha(swapped, kDefaultSinkThresholds);
  CHECK(perm.rates == base.rates);
}

TEST_CASE("softpick structural property: nonpositive first-column scores give alpha1 = 0") {
  Rng rng(52);
  const Index n = 16, d = 8;
  MatD q = randn<double>(rng, n, d).cwiseAbs();
  MatD k = randn<double>(rng, n, d);
  k.row(0) = -randn<double>(rng, 1, d).cwiseAbs();  // every q_i . k_0 < 0
  const MatD v = randn<double>(rng, n, d);
  AttentionOptions<double> o;
  o.scale = 0.35;
  const auto ref = reference_attention(q, k, v, o);
  const std::vector<LayerHeadMaps<double>> samples{{{ref.A}}};
  const auto r = sink_rate(samples, {0.0, 0.2, 0.3});
  CHECK(r.alpha1(0, 0) == 0.0);
  CHECK(r.rate_at(0.0) == 0.0);
}

TEST_CASE("sparsity: hand counts") {
  CHECK(lower_triangle_zero_pct(MatD(MatD::Zero(2, 2))) == 100.0);
  MatD m(2, 2);
  m << 1.0, 0.0, 0.0, 0.5;  // lower triangle {1, 0, 0.5}; the upper entry is ignored
  CHECK(lower_triangle_zero_pct(m) == doctest::Approx(100.0 / 3.0).epsilon(1e-15));
  const std::vector<LayerHeadMaps<double>> samples{{{m, MatD(MatD::Zero(2, 2))}}};
  CHECK(sparsity(samples) == doctest::Approx((100.0 / 3.0 + 100.0) / 2).epsilon(1e-15));
  CHECK_THROWS_AS((void)lower_triangle_zero_pct(MatD(MatD::Zero(2, 3))), DimensionError);
}

TEST_CASE("sparsity: softmax maps have none, softpick maps match the nonpositive score share") {
  Rng rng(53);
  const Index n = 24, d = 8;
  const MatD q = randn<double>(rng, n, d), k = randn<double>(rng, n, d), v = randn<double>(rng, n, d);
  AttentionOptions<double> o;
  o.scale = 1 / std::sqrt(double(d));
  o.scorer = ScorerKind::softmax();
  CHECK(lower_triangle_zero_pct(reference_attention(q, k, v, o).A) == 0.0);

  o.scorer = ScorerKind::softpick();
  const auto ref = reference_attention(q, k, v, o);
  const MatD s = matmul(q, MatD(k.transpose()));
  std::size_t nonpos = 0, total = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      ++total;
      nonpos += o.scale * s(i, j) <= 0 ? 1 : 0;
    }
  }
  CHECK(lower_triangle_zero_pct(ref.A) == 100.0 * double(nonpos) / double(total));
}

TEST_CASE("kurtosis: hand value, constant input, normal sample, scale invariance") {
  const std::vector<double> pm{1, 1, -1, -1};
  CHECK(pearson_kurtosis(pm).value() == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> flat(10, 2.5);
  CHECK_FALSE(pearson_kurtosis(flat).has_value());
  CHECK_THROWS_AS((void)pearson_kurtosis(std::vector<double>{1, 2, 3}), std::invalid_argument);

  Rng rng(54);
  std::vector<double> normal(1000000);
  for (auto& x : normal) x = rng.normal();
  const double k = pearson_kurtosis(normal).value();
  CHECK(std::abs(k - 3.0) <= 0.05);

  std::vector<double> scaled = normal;
  for (auto& x : scaled) x *= -37.5;
  CHECK(std::abs(pearson_kurtosis(scaled).value() - k) <= 1e-9);
}

TEST_CASE("box stats: quartile ordering and whiskers") {
  const auto b = box_stats({7, 1, 3, 5, 100, 2, 4, 6});
  CHECK(b.min == 1);
  CHECK(b.max == 100);
  CHECK(b.median == 4.5);
  CHECK(b.q1 == 2.75);
  CHECK(b.q3 == 6.25);
  CHECK(b.whisker_low == 1);
  CHECK(b.whisker_high == 7);  // 100 lies beyond q3 + 1.5 IQR
  CHECK(b.max_abs == 100);
  CHECK(b.count == 8);

  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(5 + trial);
    for (auto& x : xs) x = rng.normal() * 3;
    const auto s = box_stats(xs);
    CHECK(s.min <= s.q1);
    CHECK(s.q1 <= s.median);
    CHECK(s.median <= s.q3);
    CHECK(s.q3 <= s.max);
    CHECK(s.whisker_low >= s.min);
    CHECK(s.whisker_high <= s.max);
  }
}

TEST_CASE("activation stats pool every layer") {
  const auto s = activation_stats_from_layers({{1, -1, 1}, {-1, 4, -4}});
  CHECK(s.count == 6);
  CHECK(s.min == -4);
  CHECK(s.max == 4);
  REQUIRE(s.per_layer.size() == 2);
  CHECK(s.per_layer[1].max_abs == 4);
  const std::vector<double> pooled{1, -1, 1, -1, 4, -4};
  CHECK(s.kurtosis.value() == doctest::Approx(pearson_kurtosis(pooled).value()).epsilon(1e-15));
}

TEST_CASE("dead heads: zero head, 96% quiet head, half-quiet head") {
  const Index tokens = 100;
  MatD zero = MatD::Zero(tokens, 4);
  MatD mostly = MatD::Zero(tokens, 4);
  for (Index t = 0; t < 4; ++t) mostly(t * 25, 1) = 3.0;  // 4% loud
  MatD half = MatD::Zero(tokens, 4);
  for (Index t = 0; t < tokens; t += 2) half(t, 0) = 1e-3;
  const auto r = dead_heads<double>({zero, mostly, half}, 1e-6, 0.95);
  CHECK(r.dead == std::vector<bool>{true, true, false});
  CHECK(r.quiet_fraction[1] == doctest::Approx(0.96));
  CHECK(r.quiet_fraction[2] == doctest::Approx(0.5));
  CHECK(r.dead_pct == doctest::Approx(200.0 / 3.0));

  const auto none = dead_heads<double>({half, half});
  CHECK(none.dead_pct == 0.0);
}

TEST_CASE("split_head_outputs orders layer-major then head") {
  MatD l0(2, 4), l1(2, 4);
  l0 << 1, 2, 3, 4, 5, 6, 7, 8;
  l1 = -l0;
  const auto heads = split_head_outputs<double>({{l0, l1}, {l0, l1}}, 2);
  REQUIRE(heads.size() == 4);
  CHECK(heads[1].rows() == 4);
  CHECK(heads[1](0, 0) == 3);
  CHECK(heads[2](3, 1) == -6);
}

TEST_CASE("heatmap CSV round-trips exactly") {
  const auto dir = oracle::scratch_dir("csv");
  MatD m(2, 2);
  m << 1.0, 0.0, 0.1 + 0.2, 1e-300;
  export_heatmap(m, dir / "a.csv", HeatmapFormat::Csv);
  CHECK(read_heatmap_csv(dir / "a.csv") == m);

  Rng rng(56);
  const MatD r = randn<double>(rng, 7, 7).cwiseAbs();
  export_heatmap(r, dir / "b.csv", HeatmapFormat::Csv, "config_hash 0123456789abcdef step 3");
  CHECK(oracle::read_file(dir / "b.csv").rfind("# config_hash 0123456789abcdef step 3\n", 0) == 0);
  CHECK(read_heatmap_csv(dir / "b.csv") == r);
}

TEST_CASE("heatmap PGM: header, zero map, scaling") {
  const auto dir = oracle::scratch_dir("pgm");
  export_heatmap(MatD(MatD::Zero(2, 2)), dir / "zero.pgm", HeatmapFormat::Pgm);
  const std::string raw = oracle::read_file(dir / "zero.pgm");
  CHECK(raw == std::string("P5\n# max 0\n2 2\n255\n") + std::string(4, '\0'));
  const auto img = read_pgm(dir / "zero.pgm");
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.maxval == 255);
  CHECK(img.recorded_max == 0.0);
  for (auto p : img.pixels) CHECK(p == 0);

  MatD m(2, 3);
  m << 0.0, 0.25, 0.5, 0.1, 0.0, 0.0;
  export_heatmap(m, dir / "m.pgm", HeatmapFormat::Pgm, "step 7");
  const auto mi = read_pgm(dir / "m.pgm");
  CHECK(mi.width == 3);
  CHECK(mi.height == 2);
  CHECK(mi.recorded_max == 0.5);
  CHECK(mi.comments == std::vector<std::string>{"step 7"});
  CHECK(mi.pixels == std::vector<std::uint8_t>{0, 128, 255, 51, 0, 0});
}

TEST_CASE("heatmap errors") {
  const auto dir = oracle::scratch_dir("err");
  MatD neg(1, 1);
  neg << -0.5;
  CHECK_THROWS_AS(export_heatmap(neg, dir / "n.csv", HeatmapFormat::Csv), std::invalid_argument);
  CHECK_THROWS_AS(export_heatmap(MatD(MatD::Zero(1, 1)), dir / "missing" / "x.pgm", HeatmapFormat::Pgm),
                  std::runtime_error);
}
