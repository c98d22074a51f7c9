#pragma once

#include "softpick/numerics.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace softpick {

/// Attention maps of one forward pass, indexed [layer][head].
template <typename Scalar>
using LayerHeadMaps = std::vector<std::vector<Matrix<Scalar>>>;

inline const std::vector<double> kDefaultSinkThresholds{0.2, 0.3};

struct SinkReport {
  Matrix<double> alpha1;           // layers x heads, mean first-column score
  std::vector<double> thresholds;  // eps_s values
  std::vector<double> rates;       // one per threshold, in [0, 1]

  double rate_at(double eps_s) const;
};

/// Fraction of (layer, head) pairs with alpha1 > eps_s, for each threshold.
SinkReport sink_rate_from_alpha(const Matrix<double>& alpha1, const std::vector<double>& thresholds);

/// alpha1[l][h]: column 0 averaged over every query row, then over samples.
template <typename Scalar>
Matrix<double> first_column_means(const std::vector<LayerHeadMaps<Scalar>>& samples) {
  if (samples.empty()) throw std::invalid_argument("sink_rate: empty sample set");
  const auto n_layers = static_cast<Index>(samples.front().size());
  const auto n_heads = n_layers > 0 ? static_cast<Index>(samples.front().front().size()) : 0;
  Matrix<double> alpha = Matrix<double>::Zero(n_layers, n_heads);
  for (const auto& sample : samples) {
    if (static_cast<Index>(sample.size()) != n_layers) throw DimensionError("sink_rate: ragged layer count");
    for (Index l = 0; l < n_layers; ++l) {
      const auto& heads = sample[static_cast<std::size_t>(l)];
      if (static_cast<Index>(heads.size()) != n_heads) throw DimensionError("sink_rate: ragged head count");
      for (Index h = 0; h < n_heads; ++h) {
        const auto& map = heads[static_cast<std::size_t>(h)];
        alpha(l, h) += map.col(0).template cast<double>().mean();
      }
    }
  }
  alpha /= static_cast<double>(samples.size());
  return alpha;
}

template <typename Scalar>
SinkReport sink_rate(const std::vector<LayerHeadMaps<Scalar>>& samples,
                     const std::vector<double>& thresholds = kDefaultSinkThresholds) {
  return sink_rate_from_alpha(first_column_means(samples), thresholds);
}

/// Percentage of exact zeros in the lower triangle (diagonal included) of one map.
template <typename Scalar>
double lower_triangle_zero_pct(const Matrix<Scalar>& map) {
  if (map.rows() != map.cols()) throw DimensionError("sparsity: map must be square");
  std::size_t zeros = 0, total = 0;
  for (Index i = 0; i < map.rows(); ++i) {
    for (Index j = 0; j <= i; ++j) {
      ++total;
      if (map(i, j) == Scalar(0)) ++zeros;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(zeros) / static_cast<double>(total);
}

/// Mean lower-triangular exact-zero percentage over samples, layers and heads.
template <typename Scalar>
double sparsity(const std::vector<LayerHeadMaps<Scalar>>& samples) {
  double acc = 0;
  std::size_t count = 0;
  for (const auto& sample : samples) {
    for (const auto& heads : sample) {
      for (const auto& map : heads) {
        acc += lower_triangle_zero_pct(map);
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("sparsity: no maps");
  return acc / static_cast<double>(count);
}

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double whisker_low = 0, whisker_high = 0;  // furthest points within 1.5 IQR
  double max_abs = 0;
  std::size_t count = 0;
};

struct ActivationStats {
  std::optional<double> kurtosis;  // empty when the variance is zero
  double min = 0, max = 0;
  std::size_t count = 0;
  std::vector<BoxStats> per_layer;
};

/// Pearson (non-excess) kurtosis m4 / m2^2; empty for zero variance.
std::optional<double> pearson_kurtosis(std::span<const double> values);

/// Quartiles by linear interpolation on the sorted values.
BoxStats box_stats(std::vector<double> values);

/// Pools every activation of `per_layer` (values collected per layer).
ActivationStats activation_stats_from_layers(const std::vector<std::vector<double>>& per_layer);

/// samples[s][l] is the N x hidden state after layer l for sample s.
template <typename Scalar>
ActivationStats activation_stats(const std::vector<std::vector<Matrix<Scalar>>>& samples) {
  if (samples.empty()) throw std::invalid_argument("activation_stats: empty sample set");
  std::vector<std::vector<double>> per_layer(samples.front().size());
  for (const auto& trace : samples) {
    if (trace.size() != per_layer.size()) throw DimensionError("activation_stats: ragged layer count");
    for (std::size_t l = 0; l < trace.size(); ++l) {
      const auto& t = trace[l];
      per_layer[l].insert(per_layer[l].end(), t.data(), t.data() + t.size());
    }
  }
  return activation_stats_from_layers(per_layer);
}

struct DeadHeadReport {
  double eps = 1e-6;
  double token_frac = 0.95;
  std::vector<double> quiet_fraction;  // per head, share of tokens with max |output| <= eps
  std::vector<bool> dead;
  double dead_pct = 0;
};

/// heads[h] holds one row per token: the head's output before the output projection.
template <typename Scalar>
DeadHeadReport dead_heads(const std::vector<Matrix<Scalar>>& heads, double eps = 1e-6, double token_frac = 0.95) {
  DeadHeadReport r;
  r.eps = eps;
  r.token_frac = token_frac;
  std::size_t n_dead = 0;
  for (const auto& h : heads) {
    std::size_t quiet = 0;
    for (Index t = 0; t < h.rows(); ++t) {
      if (static_cast<double>(h.row(t).cwiseAbs().maxCoeff()) <= eps) ++quiet;
    }
    const double frac = h.rows() > 0 ? static_cast<double>(quiet) / static_cast<double>(h.rows()) : 0.0;
    r.quiet_fraction.push_back(frac);
    const bool is_dead = h.rows() > 0 && frac >= token_frac;
    r.dead.push_back(is_dead);
    n_dead += is_dead ? 1 : 0;
  }
  r.dead_pct = heads.empty() ? 0.0 : 100.0 * static_cast<double>(n_dead) / static_cast<double>(heads.size());
  return r;
}

/// Splits per-layer N x hidden head outputs (one entry per sample) into
/// per-head token matrices, ordered layer-major then head.
template <typename Scalar>
std::vector<Matrix<Scalar>> split_head_outputs(const std::vector<std::vector<Matrix<Scalar>>>& samples,
                                               Index n_heads) {
  if (samples.empty()) return {};
  const std::size_t n_layers = samples.front().size();
  std::vector<Matrix<Scalar>> heads;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Index rows = 0;
    for (const auto& s : samples) rows += s[l].rows();
    const Index d = samples.front()[l].cols() / n_heads;
    for (Index h = 0; h < n_heads; ++h) {
      Matrix<Scalar> m(rows, d);
      Index r = 0;
      for (const auto& s : samples) {
        m.middleRows(r, s[l].rows()) = s[l].middleCols(h * d, d);
        r += s[l].rows();
      }
      heads.push_back(std::move(m));
    }
  }
  return heads;
}

enum class HeatmapFormat { Pgm, Csv };

/// PGM: binary P5, 8-bit, linear from 0 to the map maximum, which is recorded
/// in a "# max" comment. CSV: one row per line, shortest exact decimal form.
/// A non-empty `tag` is written as an extra "# " comment line in either format.
void export_heatmap(const Matrix<double>& map, const std::filesystem::path& path, HeatmapFormat format,
                    const std::string& tag = {});

template <typename Scalar>
void export_heatmap(const Matrix<Scalar>& map, const std::filesystem::path& path, HeatmapFormat format,
                    const std::string& tag = {}) {
  export_heatmap(Matrix<double>(map.template cast<double>()), path, format, tag);
}

/// Lines starting with "#" are skipped.
Matrix<double> read_heatmap_csv(const std::filesystem::path& path);

struct PgmImage {
  Index width = 0, height = 0;
  int maxval = 0;
  std::optional<double> recorded_max;
  std::vector<std::string> comments;
  std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace softpick
