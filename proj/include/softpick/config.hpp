#pragma once

#include "softpick/model.hpp"
#include "softpick/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace softpick {

/// Raised for unreadable, malformed or invalid configuration. `key()` names the
/// offending entry as section.key when there is one.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Everything a run needs. Sections of the text form:
///   [model]  n_layers hidden n_heads head_dim ffn_mult vocab max_seq rope_theta
///            seed dtype block_rows block_cols norm_eps init_std
///   [scorer] kind eps s
///   [train]  lr warmup_steps total_steps min_lr_frac batch grad_clip beta1 beta2
///            weight_decay adam_eps seed checkpoint_every record_wall_time
///   [run]    data_path out_dir
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_path;
  std::string out_dir = "runs";

  const ScorerKind& scorer() const { return model.scorer; }
  void validate() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its resolved value in the same section syntax, sections and
/// keys sorted. Reals use the shortest form that round-trips, so parsing the
/// canonical text gives back an equal config.
std::string canonical_text(const RunConfig& cfg);

/// FNV-1a 64 over the canonical text without run.out_dir, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// The documented key list, as section.key.
std::vector<std::string> config_keys();

std::string format_real(double v);

}  // namespace softpick
