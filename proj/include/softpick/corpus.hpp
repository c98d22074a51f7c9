#pragma once

#include "softpick/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace softpick {

/// Reads a corpus as raw bytes. Missing or empty files are errors.
std::vector<std::uint8_t> load_corpus(const std::filesystem::path& path);

/// Deterministic English-like prose: Zipf-distributed words from a fixed
/// lexicon arranged into sentences and paragraphs. Exactly `bytes` long.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

/// `count` windows of `length` bytes at seeded offsets, as token ids.
std::vector<std::vector<int>> sample_windows(std::span<const std::uint8_t> corpus, std::size_t count,
                                             Index length, std::uint64_t seed);

}  // namespace softpick
