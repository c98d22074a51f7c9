#include "softpick/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace softpick {

std::vector<std::uint8_t> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw std::runtime_error("corpus " + path.string() + " is empty");
  return bytes;
}

namespace {

// Rank order roughly follows English frequency.
constexpr std::array<const char*, 160> kLexicon = {
    "the",    "of",     "and",     "to",     "a",      "in",      "is",      "that",   "it",     "was",
    "for",    "on",     "are",     "as",     "with",   "his",     "they",    "at",     "be",     "this",
    "from",   "have",   "or",      "by",     "one",    "had",     "not",     "but",    "what",   "all",
    "were",   "when",   "we",      "there",  "can",    "an",      "your",    "which",  "their",  "said",
    "if",     "do",     "will",    "each",   "about",  "how",     "up",      "out",    "them",   "then",
    "she",    "many",   "some",    "so",     "these",  "would",   "other",   "into",   "has",    "more",
    "her",    "two",    "like",    "him",    "see",    "time",    "could",   "no",     "make",   "than",
    "first",  "been",   "its",     "who",    "now",    "people",  "my",      "made",   "over",   "did",
    "down",   "only",   "way",     "find",   "use",    "may",     "water",   "long",   "little", "very",
    "after",  "words",  "called",  "just",   "where",  "most",    "know",    "get",    "through", "back",
    "much",   "before", "go",      "good",   "new",    "write",   "our",     "used",   "me",     "man",
    "too",    "any",    "day",     "same",   "right",  "look",    "think",   "also",   "around", "another",
    "came",   "come",   "work",    "three",  "word",   "must",    "because", "does",   "part",   "even",
    "place",  "well",   "such",    "here",   "take",   "why",     "things",  "help",   "put",    "years",
    "different", "away", "again",  "off",    "went",   "old",     "number",  "great",  "tell",   "men",
    "say",    "small",  "every",   "found",  "still",  "between", "name",    "should", "home",   "big"};

class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cdf_(n) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += 1.0 / static_cast<double>(i + 1);
      cdf_[i] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed);
  const ZipfSampler zipf(kLexicon.size());
  std::string out;
  out.reserve(bytes + 128);
  std::size_t sentences_in_paragraph = 0;
  while (out.size() < bytes) {
    const auto n_words = 4 + rng.uniform_int(10);
    for (std::uint64_t w = 0; w < n_words; ++w) {
      std::string word = kLexicon[zipf(rng)];
      if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      out += word;
      if (w + 1 == n_words) {
        out += rng.uniform() < 0.15 ? '?' : '.';
      } else {
        if (rng.uniform() < 0.08) out += ',';
        out += ' ';
      }
    }
    if (++sentences_in_paragraph >= 3 + rng.uniform_int(4)) {
      out += "\n\n";
      sentences_in_paragraph = 0;
    } else {
      out += ' ';
    }
  }
  out.resize(bytes);
  return out;
}

std::vector<std::vector<int>> sample_windows(std::span<const std::uint8_t> corpus, std::size_t count, Index length,
                                             std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("sample_windows: empty corpus");
  if (length < 1) throw std::invalid_argument("sample_windows: length must be >= 1");
  const auto len = std::min<std::size_t>(static_cast<std::size_t>(length), corpus.size());
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto offset = static_cast<std::size_t>(rng.uniform_int(corpus.size() - len + 1));
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(offset),
                     corpus.begin() + static_cast<std::ptrdiff_t>(offset + len));
  }
  return out;
}

}  // namespace softpick
