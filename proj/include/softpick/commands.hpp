#pragma once

#include "softpick/checkpoint.hpp"
#include "softpick/config.hpp"
#include "softpick/kernel_check.hpp"
#include "softpick/report.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace softpick {

/// Process exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitCheckFailed = 2 };

/// Bad input the operator can fix: mismatched files, selectors out of range.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out_dir;  // overrides run.out_dir
};

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::string config_hash;
  std::int64_t steps = 0;
  double final_loss = 0;
};

/// Trains per the config into <out_dir>/run-<hash>/: config.resolved.ini,
/// metrics.jsonl and ckpt-step<N>.bin. A relative run.data_path resolves
/// against the config file's directory. On a non-finite loss writes
/// diagnostic.json and throws TrainingDiverged.
TrainOutcome cmd_train(const TrainArgs& args, std::ostream& log);

/// Prints one line per case and a summary; returns kExitCheckFailed if any case fails.
int cmd_kernel_check(const KernelCheckOptions& opts, std::ostream& out);

struct AnalyzeArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> config;  // must hash to the checkpoint's config when given
  std::size_t n_samples = 10;
  std::vector<double> eps_s = kDefaultSinkThresholds;
  Index seq_len = 0;  // 0: the model's max_seq
  std::uint64_t seed = 0;
};

nlohmann::ordered_json cmd_analyze(const AnalyzeArgs& args);

struct MapsArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // text file
  std::vector<Index> layers;    // empty: all
  std::vector<Index> heads;     // empty: all
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> config;
};

/// Writes layer{l}_head{h}.pgm and .csv per selected pair; returns the paths written.
std::vector<std::filesystem::path> cmd_maps(const MapsArgs& args);

struct DeadHeadArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path corpus;
  std::size_t tokens = 2560;
  double eps = 1e-6;
  double token_frac = 0.95;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> config;
};

nlohmann::ordered_json cmd_dead_heads(const DeadHeadArgs& args);

/// Writes `bytes` of synthetic prose to `out`.
void cmd_corpus(std::size_t bytes, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace softpick
