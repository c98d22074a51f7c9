#include "softpick/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace softpick {

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key, "cannot parse '" + value + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + value + "'");
}

struct Field {
  std::string key;  // section.key
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(std::string key, T ModelConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.model.*m = parse_number<T>(key, v); },
          [m](const RunConfig& c) { return std::to_string(c.model.*m); }};
}

template <typename T>
Field train_int_field(std::string key, T TrainConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.train.*m = parse_number<T>(key, v); },
          [m](const RunConfig& c) { return std::to_string(c.train.*m); }};
}

Field real_field(std::string key, double ModelConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.model.*m = parse_number<double>(key, v); },
          [m](const RunConfig& c) { return format_real(c.model.*m); }};
}

Field train_real_field(std::string key, double TrainConfig::*m) {
  return {key, [key, m](RunConfig& c, const std::string& v) { c.train.*m = parse_number<double>(key, v); },
          [m](const RunConfig& c) { return format_real(c.train.*m); }};
}

// Application order matters only for scorer.kind, which resets eps and s.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"scorer.kind",
                 [](RunConfig& c, const std::string& v) {
                   const auto tag = parse_scorer_tag(v);
                   if (!tag) {
                     throw ConfigError("scorer.kind", "unknown scorer '" + v +
                                                          "' (softmax, softpick, rectified_only_softmax, "
                                                          "softmax_plus_one, scalable_softpick)");
                   }
                   switch (*tag) {
                     case ScorerTag::Softmax: c.model.scorer = ScorerKind::softmax(); break;
                     case ScorerTag::Softpick: c.model.scorer = ScorerKind::softpick(); break;
                     case ScorerTag::RectifiedOnlySoftmax: c.model.scorer = ScorerKind::rectified_only(); break;
                     case ScorerTag::SoftmaxPlusOne: c.model.scorer = ScorerKind::softmax_plus_one(); break;
                     case ScorerTag::ScalableSoftpick: c.model.scorer = ScorerKind::scalable(); break;
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.model.scorer.tag)); }});
    f.push_back({"scorer.eps",
                 [](RunConfig& c, const std::string& v) { c.model.scorer.eps = parse_number<double>("scorer.eps", v); },
                 [](const RunConfig& c) { return format_real(c.model.scorer.eps); }});
    f.push_back({"scorer.s",
                 [](RunConfig& c, const std::string& v) {
                   if (c.model.scorer.tag != ScorerTag::ScalableSoftpick) {
                     throw ConfigError("scorer.s", "only valid with kind = scalable_softpick");
                   }
                   c.model.scorer.s_param = parse_number<double>("scorer.s", v);
                 },
                 [](const RunConfig& c) { return format_real(c.model.scorer.s_param.value_or(0.0)); }});
    f.push_back(int_field("model.n_layers", &ModelConfig::n_layers));
    f.push_back(int_field("model.hidden", &ModelConfig::hidden));
    f.push_back(int_field("model.n_heads", &ModelConfig::n_heads));
    f.push_back(int_field("model.head_dim", &ModelConfig::head_dim));
    f.push_back(real_field("model.ffn_mult", &ModelConfig::ffn_mult));
    f.push_back(int_field("model.vocab", &ModelConfig::vocab));
    f.push_back(int_field("model.max_seq", &ModelConfig::max_seq));
    f.push_back(real_field("model.rope_theta", &ModelConfig::rope_theta));
    f.push_back(int_field("model.seed", &ModelConfig::seed));
    f.push_back({"model.dtype",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "f32") {
                     c.model.dtype = DType::F32;
                   } else if (v == "f64") {
                     c.model.dtype = DType::F64;
                   } else {
                     throw ConfigError("model.dtype", "expected f32 or f64, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.model.dtype)); }});
    f.push_back({"model.block_rows",
                 [](RunConfig& c, const std::string& v) {
                   c.model.block.rows = parse_number<Index>("model.block_rows", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.model.block.rows); }});
    f.push_back({"model.block_cols",
                 [](RunConfig& c, const std::string& v) {
                   c.model.block.cols = parse_number<Index>("model.block_cols", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.model.block.cols); }});
    f.push_back(real_field("model.norm_eps", &ModelConfig::norm_eps));
    f.push_back(real_field("model.init_std", &ModelConfig::init_std));
    f.push_back(train_real_field("train.lr", &TrainConfig::lr));
    f.push_back(train_int_field("train.warmup_steps", &TrainConfig::warmup_steps));
    f.push_back(train_int_field("train.total_steps", &TrainConfig::total_steps));
    f.push_back(train_real_field("train.min_lr_frac", &TrainConfig::min_lr_frac));
    f.push_back(train_int_field("train.batch", &TrainConfig::batch));
    f.push_back(train_real_field("train.grad_clip", &TrainConfig::grad_clip));
    f.push_back(train_real_field("train.beta1", &TrainConfig::beta1));
    f.push_back(train_real_field("train.beta2", &TrainConfig::beta2));
    f.push_back(train_real_field("train.weight_decay", &TrainConfig::weight_decay));
    f.push_back(train_real_field("train.adam_eps", &TrainConfig::adam_eps));
    f.push_back(train_int_field("train.seed", &TrainConfig::seed));
    f.push_back(train_int_field("train.checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back({"train.record_wall_time",
                 [](RunConfig& c, const std::string& v) {
                   c.train.record_wall_time = parse_bool("train.record_wall_time", v);
                 },
                 [](const RunConfig& c) { return std::string(c.train.record_wall_time ? "true" : "false"); }});
    f.push_back({"run.data_path", [](RunConfig& c, const std::string& v) { c.data_path = v; },
                 [](const RunConfig& c) { return c.data_path; }});
    f.push_back({"run.out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir; }});
    return f;
  }();
  return table;
}

// Maps messages from the struct validators, which already name their key, to ConfigError.
std::string key_from_message(const std::string& msg) {
  for (const auto& f : fields()) {
    if (msg.rfind(f.key, 0) == 0) return f.key;
  }
  return {};
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const std::string key = key_from_message(msg);
    if (msg.rfind("scorer", 0) == 0) throw ConfigError("scorer.eps", msg);
    throw ConfigError(key, key.empty() ? msg : msg.substr(key.size() + 1));
  }
  if (model.scorer.tag == ScorerTag::ScalableSoftpick && !model.scorer.s_param) {
    throw ConfigError("scorer.s", "required for scalable_softpick");
  }
}

RunConfig parse_run_config(std::string_view text) {
  std::map<std::string, std::string> entries;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  const std::vector<std::string> sections{"model", "scorer", "train", "run"};
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
        throw ConfigError(section, "unknown section (model, scorer, train, run)");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string name = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(name, "key outside of any section");
    const std::string key = section + "." + name;
    const auto& table = fields();
    const bool known = std::any_of(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (!known) throw ConfigError(key, "unknown key");
    if (!entries.emplace(key, value).second) throw ConfigError(key, "duplicate key");
  }
  RunConfig cfg;
  for (const auto& f : fields()) {
    const auto it = entries.find(f.key);
    if (it != entries.end()) f.set(cfg, it->second);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string canonical_text(const RunConfig& cfg) {
  std::map<std::string, std::map<std::string, std::string>> sections;
  for (const auto& f : fields()) {
    if (f.key == "scorer.s" && !cfg.model.scorer.s_param) continue;
    const auto dot = f.key.find('.');
    sections[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  std::string out;
  for (const auto& [name, keys] : sections) {
    if (!out.empty()) out += "\n";
    out += "[" + name + "]\n";
    for (const auto& [k, v] : keys) out += k + " = " + v + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig copy = cfg;
  copy.out_dir.clear();
  const std::string text = canonical_text(copy);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace softpick
