#pragma once

#include "softpick/config.hpp"
#include "softpick/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace softpick {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'K', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout (little-endian):
///   magic[8] u32 version u32 scalar_bytes u64 step
///   str config_hash str config_text u64 n_params
///   n_params x { str name u64 rows u64 cols scalar[rows*cols] row-major }
/// where str is u64 length followed by the bytes.
struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  DType dtype = DType::F32;
  std::int64_t step = 0;
  std::string config_hash;
  std::string config_text;
  std::uint64_t n_params = 0;

  RunConfig config() const { return parse_run_config(config_text); }
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_str(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

inline std::string get_str(std::istream& in, std::uint64_t limit = 1u << 24) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw CheckpointError("checkpoint string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw CheckpointError("checkpoint truncated");
  return s;
}

inline CheckpointHeader read_header(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw CheckpointError("not a checkpoint file");
  CheckpointHeader h;
  h.version = get<std::uint32_t>(in);
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(h.version));
  }
  const auto bytes = get<std::uint32_t>(in);
  if (bytes == 4) {
    h.dtype = DType::F32;
  } else if (bytes == 8) {
    h.dtype = DType::F64;
  } else {
    throw CheckpointError("unsupported scalar width " + std::to_string(bytes));
  }
  h.step = static_cast<std::int64_t>(get<std::uint64_t>(in));
  h.config_hash = get_str(in);
  h.config_text = get_str(in);
  h.n_params = get<std::uint64_t>(in);
  return h;
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelState<Scalar>& state, std::int64_t step,
                     const RunConfig& cfg) {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(Scalar));
  detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(step));
  detail::put_str(out, config_hash(cfg));
  detail::put_str(out, canonical_text(cfg));
  std::uint64_t n = 0;
  for_each_parameter(state, [&](const std::string&, const auto&) { ++n; });
  detail::put<std::uint64_t>(out, n);
  for_each_parameter(state, [&](const std::string& name, const auto& t) {
    detail::put_str(out, name);
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  });
  if (!out) throw CheckpointError("write failed for " + path.string());
}

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return detail::read_header(in);
}

/// Loads parameters into a state shaped by the embedded config. The stored
/// scalar type must match `Scalar`.
template <typename Scalar>
ModelState<Scalar> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const CheckpointHeader h = detail::read_header(in);
  if ((h.dtype == DType::F32) != std::is_same_v<Scalar, float>) {
    throw CheckpointError("checkpoint stores " + std::string(to_string(h.dtype)) + " parameters");
  }
  const RunConfig cfg = h.config();
  if (config_hash(cfg) != h.config_hash) throw CheckpointError("checkpoint config text does not match its hash");
  ModelState<Scalar> state = init_model<Scalar>(cfg.model);
  std::uint64_t seen = 0;
  for_each_parameter(state, [&](const std::string& name, auto& t) {
    if (seen >= h.n_params) throw CheckpointError("checkpoint is missing parameter " + name);
    const std::string stored = detail::get_str(in);
    const auto rows = detail::get<std::uint64_t>(in);
    const auto cols = detail::get<std::uint64_t>(in);
    if (stored != name || rows != static_cast<std::uint64_t>(t.rows()) ||
        cols != static_cast<std::uint64_t>(t.cols())) {
      throw CheckpointError("checkpoint parameter " + stored + " does not match expected " + name);
    }
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
    if (!in) throw CheckpointError("checkpoint truncated in " + name);
    ++seen;
  });
  if (seen != h.n_params) throw CheckpointError("checkpoint has unexpected extra parameters");
  if (header_out) *header_out = h;
  return state;
}

}  // namespace softpick
