#pragma once

#include "softpick/analysis.hpp"
#include "softpick/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace softpick {

/// Every diagnostic of one model over one sample set.
struct AnalysisResult {
  SinkReport sink;
  double sparsity_pct = 0;
  ActivationStats activations;
  DeadHeadReport dead;
  Index n_layers = 0, n_heads = 0;
  std::size_t n_samples = 0;
  Index seq_len = 0;
};

/// Runs each sample through the model capturing maps, hidden states and head
/// outputs, and aggregates them in sample order.
template <typename Scalar>
AnalysisResult analyze_model(const ModelState<Scalar>& state, const ModelConfig& cfg,
                             const std::vector<std::vector<int>>& samples,
                             const std::vector<double>& thresholds = kDefaultSinkThresholds);

struct ReportMeta {
  std::string config_hash;
  std::int64_t step = 0;
  std::string scorer;
  std::string dtype;
};

/// The analysis document. "row" holds the headline metrics (sink rate per
/// threshold, kurtosis, min, max, sparsity %); the other sections carry the
/// per-head and per-layer detail behind them.
nlohmann::ordered_json analysis_report_json(const AnalysisResult& r, const ReportMeta& meta);

/// Dead-head percentage for one checkpoint.
struct DeadHeadPoint {
  std::int64_t step = 0;
  double dead_pct = 0;
  std::vector<bool> dead;
};

nlohmann::ordered_json dead_head_series_json(const std::vector<DeadHeadPoint>& points, const std::string& config_hash,
                                             double eps, double token_frac, std::size_t tokens);

}  // namespace softpick
