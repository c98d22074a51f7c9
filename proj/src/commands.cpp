#include "softpick/commands.hpp"

#include "softpick/corpus.hpp"
#include "softpick/trainer.hpp"

#include <fstream>
#include <iomanip>
#include <set>

namespace softpick {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ordered_json metrics_json(const MetricsRecord& r) {
  ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["grad_norm"] = r.grad_norm;
  j["tokens_seen"] = r.tokens_seen;
  j["wall_ms"] = r.wall_ms;
  return j;
}

std::string ckpt_name(std::int64_t step) { return "ckpt-step" + std::to_string(step) + ".bin"; }

template <typename Scalar>
TrainOutcome run_training(const RunConfig& cfg, const std::vector<std::uint8_t>& corpus, const fs::path& run_dir,
                          std::ostream& log) {
  std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (run_dir / "metrics.jsonl").string());
  TrainHooks<Scalar> hooks;
  const auto log_every = std::max<std::int64_t>(1, cfg.train.total_steps / 20);
  hooks.on_metrics = [&](const MetricsRecord& r) {
    metrics << metrics_json(r).dump() << '\n';
    metrics.flush();
    if (r.step % log_every == 0 || r.step == cfg.train.total_steps) {
      log << "step " << r.step << "  loss " << std::fixed << std::setprecision(4) << r.loss << "  grad_norm "
          << r.grad_norm << "  lr " << std::scientific << std::setprecision(3) << r.lr << std::defaultfloat << '\n';
    }
  };
  hooks.on_checkpoint = [&](std::int64_t step, const ModelState<Scalar>& state) {
    save_checkpoint(run_dir / ckpt_name(step), state, step, cfg);
  };
  TrainOutcome outcome;
  outcome.run_dir = run_dir;
  outcome.config_hash = config_hash(cfg);
  try {
    auto result = train<Scalar>(cfg.model, init_model<Scalar>(cfg.model), corpus, cfg.train, hooks);
    outcome.steps = static_cast<std::int64_t>(result.metrics.size());
    outcome.final_loss = result.metrics.empty() ? 0.0 : result.metrics.back().loss;
  } catch (const TrainingDiverged& e) {
    ordered_json diag;
    diag["config_hash"] = outcome.config_hash;
    diag["error"] = e.what();
    diag["record"] = metrics_json(e.record);
    // JSON has no NaN/inf; keep the textual value of the loss.
    diag["record"]["loss"] = std::to_string(e.record.loss);
    write_text(run_dir / "diagnostic.json", diag.dump(2) + "\n");
    throw;
  }
  return outcome;
}

void require_hash(const std::optional<fs::path>& config, const CheckpointHeader& header, const fs::path& ckpt) {
  if (!config) return;
  const std::string expected = config_hash(load_run_config(*config));
  if (expected != header.config_hash) {
    throw UsageError("config/checkpoint mismatch: " + config->string() + " hashes to " + expected + " but " +
                     ckpt.string() + " was written with " + header.config_hash);
  }
}

/// Calls fn(state, header) with the checkpoint loaded at its stored precision.
template <typename Fn>
auto with_checkpoint(const fs::path& path, Fn&& fn) {
  const CheckpointHeader header = read_checkpoint_header(path);
  if (header.dtype == DType::F64) {
    CheckpointHeader h;
    const auto state = load_checkpoint<double>(path, &h);
    return fn(state, h);
  }
  CheckpointHeader h;
  const auto state = load_checkpoint<float>(path, &h);
  return fn(state, h);
}

void check_corpus_vocab(const std::vector<std::uint8_t>& corpus, const ModelConfig& cfg) {
  for (std::uint8_t b : corpus) {
    if (static_cast<Index>(b) >= cfg.vocab) {
      throw UsageError("corpus byte " + std::to_string(b) + " outside the model vocab of " + std::to_string(cfg.vocab));
    }
  }
}

std::vector<int> text_tokens(const fs::path& path, const ModelConfig& cfg) {
  const auto bytes = load_corpus(path);
  check_corpus_vocab(bytes, cfg);
  const auto n = std::min<std::size_t>(bytes.size(), static_cast<std::size_t>(cfg.max_seq));
  return {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<Index> select(const std::vector<Index>& wanted, Index count, const char* what) {
  if (wanted.empty()) {
    std::vector<Index> all(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::set<Index> seen;
  for (Index w : wanted) {
    if (w < 0 || w >= count) {
      throw UsageError(std::string(what) + " " + std::to_string(w) + " out of range [0, " + std::to_string(count) +
                       ")");
    }
    if (!seen.insert(w).second) throw UsageError(std::string(what) + " " + std::to_string(w) + " selected twice");
  }
  return wanted;
}

}  // namespace

TrainOutcome cmd_train(const TrainArgs& args, std::ostream& log) {
  const RunConfig cfg = load_run_config(args.config);
  if (cfg.data_path.empty()) throw ConfigError("run.data_path", "required for training");
  fs::path data = cfg.data_path;
  if (data.is_relative()) data = args.config.parent_path() / data;
  const auto corpus = load_corpus(data);
  check_corpus_vocab(corpus, cfg.model);

  const fs::path out_dir = args.out_dir ? *args.out_dir : fs::path(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  const fs::path run_dir = out_dir / ("run-" + hash);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.resolved.ini", "# config_hash " + hash + "\n" + canonical_text(cfg));
  log << "run " << run_dir.string() << " (" << to_string(cfg.model.scorer.tag) << ", " << to_string(cfg.model.dtype)
      << ", " << cfg.train.total_steps << " steps)\n";
  if (cfg.model.dtype == DType::F64) return run_training<double>(cfg, corpus, run_dir, log);
  return run_training<float>(cfg, corpus, run_dir, log);
}

int cmd_kernel_check(const KernelCheckOptions& opts, std::ostream& out) {
  const auto cases = run_kernel_checks(opts);
  std::size_t failed = 0;
  for (const auto& c : cases) {
    out << (c.passed() ? "PASS  " : "FAIL  ") << c.name << "  error " << std::scientific << std::setprecision(3)
        << c.error << "  tolerance " << c.tolerance << std::defaultfloat << '\n';
    failed += c.passed() ? 0 : 1;
  }
  out << (cases.size() - failed) << "/" << cases.size() << " cases passed";
  if (opts.corrupt_rescale) out << " (rescale factor deliberately corrupted)";
  out << '\n';
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

ordered_json cmd_analyze(const AnalyzeArgs& args) {
  if (args.n_samples < 1) throw UsageError("analyze: n_samples must be >= 1");
  if (args.eps_s.empty()) throw UsageError("analyze: at least one eps_s threshold is required");
  const auto corpus = load_corpus(args.corpus);
  return with_checkpoint(args.checkpoint, [&](const auto& state, const CheckpointHeader& header) {
    require_hash(args.config, header, args.checkpoint);
    const RunConfig cfg = header.config();
    check_corpus_vocab(corpus, cfg.model);
    const Index len = args.seq_len > 0 ? std::min(args.seq_len, cfg.model.max_seq) : cfg.model.max_seq;
    const auto samples = sample_windows(corpus, args.n_samples, len, args.seed);
    const auto result = analyze_model(state, cfg.model, samples, args.eps_s);
    ReportMeta meta{header.config_hash, header.step, std::string(to_string(cfg.model.scorer.tag)),
                    std::string(to_string(header.dtype))};
    return analysis_report_json(result, meta);
  });
}

std::vector<fs::path> cmd_maps(const MapsArgs& args) {
  return with_checkpoint(args.checkpoint, [&](const auto& state, const CheckpointHeader& header) {
    using Scalar = typename std::decay_t<decltype(state.head)>::Scalar;
    require_hash(args.config, header, args.checkpoint);
    const RunConfig cfg = header.config();
    const auto layers = select(args.layers, cfg.model.n_layers, "layer");
    const auto heads = select(args.heads, cfg.model.n_heads, "head");
    const auto tokens = text_tokens(args.input, cfg.model);
    Capture capture;
    capture.maps = true;
    const auto fwd = model_forward<Scalar>(tokens, state, cfg.model, capture);
    fs::create_directories(args.out_dir);
    const std::string tag = "config_hash " + header.config_hash + " step " + std::to_string(header.step);
    std::vector<fs::path> written;
    for (Index l : layers) {
      for (Index h : heads) {
        const auto& map = fwd.maps[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
        const std::string stem = "layer" + std::to_string(l) + "_head" + std::to_string(h);
        written.push_back(args.out_dir / (stem + ".pgm"));
        export_heatmap(map, written.back(), HeatmapFormat::Pgm, tag);
        written.push_back(args.out_dir / (stem + ".csv"));
        export_heatmap(map, written.back(), HeatmapFormat::Csv, tag);
      }
    }
    return written;
  });
}

ordered_json cmd_dead_heads(const DeadHeadArgs& args) {
  if (args.checkpoints.empty()) throw UsageError("dead-heads: at least one checkpoint is required");
  if (args.tokens < 1) throw UsageError("dead-heads: token budget must be >= 1");
  const auto corpus = load_corpus(args.corpus);
  std::vector<DeadHeadPoint> points;
  std::string hash;
  for (const auto& path : args.checkpoints) {
    points.push_back(with_checkpoint(path, [&](const auto& state, const CheckpointHeader& header) {
      using Scalar = typename std::decay_t<decltype(state.head)>::Scalar;
      require_hash(args.config, header, path);
      if (hash.empty()) hash = header.config_hash;
      if (header.config_hash != hash) {
        throw UsageError("dead-heads: " + path.string() + " belongs to config " + header.config_hash +
                         ", expected " + hash);
      }
      const RunConfig cfg = header.config();
      check_corpus_vocab(corpus, cfg.model);
      const Index len = std::min<Index>(cfg.model.max_seq, static_cast<Index>(corpus.size()));
      const std::size_t n_windows = (args.tokens + static_cast<std::size_t>(len) - 1) / static_cast<std::size_t>(len);
      std::vector<std::vector<Matrix<Scalar>>> outputs;
      Capture capture;
      capture.head_outputs = true;
      for (const auto& tokens : sample_windows(corpus, n_windows, len, args.seed)) {
        outputs.push_back(model_forward<Scalar>(tokens, state, cfg.model, capture).head_outputs);
      }
      const auto report = dead_heads(split_head_outputs(outputs, cfg.model.n_heads), args.eps, args.token_frac);
      return DeadHeadPoint{header.step, report.dead_pct, report.dead};
    }));
  }
  std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return dead_head_series_json(points, hash, args.eps, args.token_frac, args.tokens);
}

void cmd_corpus(std::size_t bytes, std::uint64_t seed, const fs::path& out) {
  if (bytes < 1) throw UsageError("corpus: size must be >= 1 byte");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, synthetic_corpus(bytes, seed));
}

}  // namespace softpick
