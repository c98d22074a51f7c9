#include "softpick/report.hpp"

#include "softpick/config.hpp"

namespace softpick {

template <typename Scalar>
AnalysisResult analyze_model(const ModelState<Scalar>& state, const ModelConfig& cfg,
                             const std::vector<std::vector<int>>& samples, const std::vector<double>& thresholds) {
  if (samples.empty()) throw std::invalid_argument("analysis: empty sample set");
  std::vector<LayerHeadMaps<Scalar>> maps;
  std::vector<HiddenTrace<Scalar>> traces;
  std::vector<std::vector<Matrix<Scalar>>> head_outputs;
  for (const auto& tokens : samples) {
    auto fwd = model_forward<Scalar>(tokens, state, cfg, Capture::everything());
    maps.push_back(std::move(fwd.maps));
    traces.push_back(std::move(fwd.hidden));
    head_outputs.push_back(std::move(fwd.head_outputs));
  }
  AnalysisResult r;
  r.sink = sink_rate(maps, thresholds);
  r.sparsity_pct = sparsity(maps);
  r.activations = activation_stats(traces);
  r.dead = dead_heads(split_head_outputs(head_outputs, cfg.n_heads));
  r.n_layers = cfg.n_layers;
  r.n_heads = cfg.n_heads;
  r.n_samples = samples.size();
  r.seq_len = static_cast<Index>(samples.front().size());
  return r;
}

template AnalysisResult analyze_model<float>(const ModelState<float>&, const ModelConfig&,
                                             const std::vector<std::vector<int>>&, const std::vector<double>&);
template AnalysisResult analyze_model<double>(const ModelState<double>&, const ModelConfig&,
                                              const std::vector<std::vector<int>>&, const std::vector<double>&);

namespace {

nlohmann::ordered_json box_json(const BoxStats& b) {
  nlohmann::ordered_json j;
  j["min"] = b.min;
  j["q1"] = b.q1;
  j["median"] = b.median;
  j["q3"] = b.q3;
  j["max"] = b.max;
  j["whisker_low"] = b.whisker_low;
  j["whisker_high"] = b.whisker_high;
  j["max_abs"] = b.max_abs;
  j["count"] = b.count;
  return j;
}

}  // namespace

nlohmann::ordered_json analysis_report_json(const AnalysisResult& r, const ReportMeta& meta) {
  using json = nlohmann::ordered_json;
  json doc;
  doc["config_hash"] = meta.config_hash;
  doc["step"] = meta.step;
  doc["scorer"] = meta.scorer;
  doc["dtype"] = meta.dtype;
  doc["n_samples"] = r.n_samples;
  doc["seq_len"] = r.seq_len;

  json row;
  json rates = json::array();
  for (std::size_t i = 0; i < r.sink.thresholds.size(); ++i) {
    rates.push_back({{"eps_s", r.sink.thresholds[i]}, {"sink_rate", r.sink.rates[i]}});
  }
  row["sink_rate"] = rates;
  row["kurtosis"] = r.activations.kurtosis ? json(*r.activations.kurtosis) : json(nullptr);
  row["min"] = r.activations.min;
  row["max"] = r.activations.max;
  row["sparsity_pct"] = r.sparsity_pct;
  doc["row"] = row;

  json alpha = json::array();
  for (Index l = 0; l < r.sink.alpha1.rows(); ++l) {
    json layer = json::array();
    for (Index h = 0; h < r.sink.alpha1.cols(); ++h) layer.push_back(r.sink.alpha1(l, h));
    alpha.push_back(layer);
  }
  doc["sink"] = {{"alpha1", alpha}, {"rows_averaged", "all query rows, then samples"}};
  doc["sparsity"] = {{"pct", r.sparsity_pct}, {"region", "lower triangle including the diagonal"}};

  json layers = json::array();
  for (const auto& b : r.activations.per_layer) layers.push_back(box_json(b));
  doc["activations"] = {{"kurtosis", row["kurtosis"]},
                        {"kurtosis_convention", "pearson"},
                        {"min", r.activations.min},
                        {"max", r.activations.max},
                        {"count", r.activations.count},
                        {"per_layer", layers}};

  json heads = json::array();
  for (std::size_t i = 0; i < r.dead.dead.size(); ++i) {
    heads.push_back({{"layer", static_cast<Index>(i) / r.n_heads},
                     {"head", static_cast<Index>(i) % r.n_heads},
                     {"quiet_fraction", r.dead.quiet_fraction[i]},
                     {"dead", static_cast<bool>(r.dead.dead[i])}});
  }
  doc["dead_heads"] = {{"eps", r.dead.eps},
                       {"token_frac", r.dead.token_frac},
                       {"dead_pct", r.dead.dead_pct},
                       {"heads", heads}};
  return doc;
}

nlohmann::ordered_json dead_head_series_json(const std::vector<DeadHeadPoint>& points, const std::string& config_hash,
                                             double eps, double token_frac, std::size_t tokens) {
  using json = nlohmann::ordered_json;
  json series = json::array();
  for (const auto& p : points) {
    json flags = json::array();
    for (bool d : p.dead) flags.push_back(d);
    series.push_back({{"step", p.step}, {"dead_pct", p.dead_pct}, {"dead", flags}});
  }
  return json{{"config_hash", config_hash},
              {"eps", eps},
              {"token_frac", token_frac},
              {"tokens", tokens},
              {"series", series}};
}

}  // namespace softpick
