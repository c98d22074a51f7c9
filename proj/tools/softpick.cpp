#include "softpick/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using softpick::Index;

void emit(const nlohmann::ordered_json& doc, const std::string& out) {
  const std::string text = doc.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << text;
}

std::vector<softpick::ScorerTag> parse_scorers(const std::vector<std::string>& names) {
  std::vector<softpick::ScorerTag> tags;
  for (const auto& n : names) {
    const auto tag = softpick::parse_scorer_tag(n);
    if (!tag) throw softpick::UsageError("unknown scorer '" + n + "'");
    tags.push_back(*tag);
  }
  return tags;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Softpick attention: training, kernel self-checks and attention diagnostics"};
  app.require_subcommand(1);

  softpick::TrainArgs train_args;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", train_args.config, "Run config (.ini)")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", train_out, "Override run.out_dir");

  softpick::KernelCheckOptions kc;
  std::string kc_dtype = "both";
  std::vector<std::string> kc_scorers{"softpick", "softmax"};
  bool kc_no_grad = false;
  auto* check = app.add_subcommand("kernel-check", "Tiled kernels vs reference and finite differences");
  check->add_option("--sizes", kc.sizes, "Sequence lengths")->delimiter(',')->capture_default_str();
  check->add_option("--blocks", kc.blocks, "Square block sizes")->delimiter(',')->capture_default_str();
  check->add_option("--dtype", kc_dtype, "f32, f64 or both")->check(CLI::IsMember({"f32", "f64", "both"}));
  check->add_option("--scorers", kc_scorers, "Scorers to sweep")->delimiter(',');
  check->add_option("--head-dim", kc.head_dim, "Head dimension for the forward sweep")->capture_default_str();
  check->add_option("--seed", kc.seed, "Input seed")->capture_default_str();
  check->add_flag("--no-gradients", kc_no_grad, "Skip the finite-difference suite");
  check->add_flag("--corrupt-rescale", kc.corrupt_rescale, "Negative control: invert the running rescale factor");

  softpick::AnalyzeArgs an;
  std::string an_config, an_out;
  auto* analyze = app.add_subcommand("analyze", "Sink rate, sparsity, activation statistics and dead heads");
  analyze->add_option("--checkpoint", an.checkpoint)->required()->check(CLI::ExistingFile);
  analyze->add_option("--corpus", an.corpus)->required();
  analyze->add_option("--config", an_config, "Refuse to run unless the checkpoint was written with this config");
  analyze->add_option("--samples", an.n_samples, "Number of text samples")->capture_default_str();
  analyze->add_option("--eps-s", an.eps_s, "Sink thresholds")->delimiter(',');
  analyze->add_option("--seq-len", an.seq_len, "Sample length (default: max_seq)");
  analyze->add_option("--seed", an.seed, "Sample offset seed")->capture_default_str();
  analyze->add_option("--out", an_out, "Report path (default: stdout)");

  softpick::MapsArgs maps;
  std::string maps_config;
  auto* maps_cmd = app.add_subcommand("maps", "Export attention maps as PGM and CSV");
  maps_cmd->add_option("--checkpoint", maps.checkpoint)->required()->check(CLI::ExistingFile);
  maps_cmd->add_option("--input", maps.input, "Text file run through the model")->required();
  maps_cmd->add_option("--layers", maps.layers, "Layer indices (default: all)")->delimiter(',');
  maps_cmd->add_option("--heads", maps.heads, "Head indices (default: all)")->delimiter(',');
  maps_cmd->add_option("--out-dir", maps.out_dir)->required();
  maps_cmd->add_option("--config", maps_config);

  softpick::DeadHeadArgs dh;
  std::string dh_config, dh_out;
  auto* dead = app.add_subcommand("dead-heads", "Dead-head percentage per checkpoint");
  dead->add_option("checkpoints", dh.checkpoints)->required()->check(CLI::ExistingFile);
  dead->add_option("--corpus", dh.corpus)->required();
  dead->add_option("--tokens", dh.tokens, "Token budget per checkpoint")->capture_default_str();
  dead->add_option("--eps", dh.eps)->capture_default_str();
  dead->add_option("--token-frac", dh.token_frac)->capture_default_str();
  dead->add_option("--seed", dh.seed)->capture_default_str();
  dead->add_option("--config", dh_config);
  dead->add_option("--out", dh_out, "Output path (default: stdout)");

  std::size_t corpus_bytes = 1 << 20;
  std::uint64_t corpus_seed = 0;
  std::string corpus_out;
  auto* corpus = app.add_subcommand("corpus", "Write a synthetic English-like byte corpus");
  corpus->add_option("--bytes", corpus_bytes)->capture_default_str();
  corpus->add_option("--seed", corpus_seed)->capture_default_str();
  corpus->add_option("--out", corpus_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? softpick::kExitOk : softpick::kExitValidation;
  }

  auto optional_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };

  try {
    if (*train) {
      if (!train_out.empty()) train_args.out_dir = train_out;
      const auto outcome = softpick::cmd_train(train_args, std::cerr);
      std::cout << outcome.run_dir.string() << '\n';
    } else if (*check) {
      kc.f32 = kc_dtype != "f64";
      kc.f64 = kc_dtype != "f32";
      kc.gradients = !kc_no_grad;
      kc.scorers = parse_scorers(kc_scorers);
      return softpick::cmd_kernel_check(kc, std::cout);
    } else if (*analyze) {
      an.config = optional_path(an_config);
      emit(softpick::cmd_analyze(an), an_out);
    } else if (*maps_cmd) {
      maps.config = optional_path(maps_config);
      for (const auto& p : softpick::cmd_maps(maps)) std::cout << p.string() << '\n';
    } else if (*dead) {
      dh.config = optional_path(dh_config);
      emit(softpick::cmd_dead_heads(dh), dh_out);
    } else if (*corpus) {
      softpick::cmd_corpus(corpus_bytes, corpus_seed, corpus_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return softpick::kExitValidation;
  }
  return softpick::kExitOk;
}
