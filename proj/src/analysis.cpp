#include "softpick/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace softpick {

double SinkReport::rate_at(double eps_s) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == eps_s) return rates[i];
  }
  throw std::out_of_range("SinkReport: threshold not evaluated");
}

SinkReport sink_rate_from_alpha(const Matrix<double>& alpha1, const std::vector<double>& thresholds) {
  if (alpha1.size() == 0) throw std::invalid_argument("sink_rate: no heads");
  SinkReport r;
  r.alpha1 = alpha1;
  r.thresholds = thresholds;
  // Mean over layers of the per-layer head fraction.
  for (double eps_s : thresholds) {
    double acc = 0;
    for (Index l = 0; l < alpha1.rows(); ++l) {
      Index above = 0;
      for (Index h = 0; h < alpha1.cols(); ++h) above += alpha1(l, h) > eps_s ? 1 : 0;
      acc += static_cast<double>(above) / static_cast<double>(alpha1.cols());
    }
    r.rates.push_back(acc / static_cast<double>(alpha1.rows()));
  }
  return r;
}

std::optional<double> pearson_kurtosis(std::span<const double> values) {
  if (values.size() < 4) throw std::invalid_argument("kurtosis: need at least 4 values");
  long double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<long double>(values.size());
  long double m2 = 0, m4 = 0;
  for (double v : values) {
    const long double d = v - mean;
    const long double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= static_cast<long double>(values.size());
  m4 /= static_cast<long double>(values.size());
  if (m2 == 0) return std::nullopt;
  return static_cast<double>(m4 / (m2 * m2));
}

namespace {
double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}
}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: no values");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.count = values.size();
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = *std::lower_bound(values.begin(), values.end(), lo_fence);
  b.whisker_high = *(std::upper_bound(values.begin(), values.end(), hi_fence) - 1);
  b.max_abs = std::max(std::abs(b.min), std::abs(b.max));
  return b;
}

ActivationStats activation_stats_from_layers(const std::vector<std::vector<double>>& per_layer) {
  std::vector<double> pooled;
  for (const auto& layer : per_layer) pooled.insert(pooled.end(), layer.begin(), layer.end());
  ActivationStats s;
  s.kurtosis = pearson_kurtosis(pooled);
  s.count = pooled.size();
  const auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
  s.min = *lo;
  s.max = *hi;
  for (const auto& layer : per_layer) s.per_layer.push_back(box_stats(layer));
  return s;
}

namespace {
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
}  // namespace

void export_heatmap(const Matrix<double>& map, const std::filesystem::path& path, HeatmapFormat format,
                    const std::string& tag) {
  if (tag.find('\n') != std::string::npos) throw std::invalid_argument("export_heatmap: tag must be one line");
  if (map.size() == 0) throw std::invalid_argument("export_heatmap: empty map");
  if ((map.array() < 0).any()) throw std::invalid_argument("export_heatmap: map has negative entries");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("export_heatmap: cannot write " + path.string());
  if (format == HeatmapFormat::Csv) {
    if (!tag.empty()) out << "# " << tag << '\n';
    for (Index i = 0; i < map.rows(); ++i) {
      for (Index j = 0; j < map.cols(); ++j) {
        if (j) out << ',';
        out << format_double(map(i, j));
      }
      out << '\n';
    }
  } else {
    const double max = map.maxCoeff();
    out << "P5\n# max " << format_double(max) << "\n";
    if (!tag.empty()) out << "# " << tag << "\n";
    out << map.cols() << ' ' << map.rows() << "\n255\n";
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(map.size()), 0);
    if (max > 0) {
      for (Index i = 0; i < map.size(); ++i) {
        const double level = std::round(255.0 * map.data()[i] / max);
        pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  }
  if (!out) throw std::runtime_error("export_heatmap: write failed for " + path.string());
}

Matrix<double> read_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_heatmap_csv: cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      double v;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw std::runtime_error("read_heatmap_csv: malformed value in " + path.string());
      row.push_back(v);
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("read_heatmap_csv: empty file " + path.string());
  Matrix<double> m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw std::runtime_error("read_heatmap_csv: ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
  PgmImage img;
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM");
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        std::string text = tok.substr(1) + rest;
        if (!text.empty() && text[0] == ' ') text.erase(0, 1);
        if (text.rfind("max ", 0) == 0 && !img.recorded_max) {
          img.recorded_max = std::stod(text.substr(4));
        } else {
          img.comments.push_back(text);
        }
        continue;
      }
      return tok;
    }
    throw std::runtime_error("read_pgm: truncated header");
  };
  img.width = std::stol(next_token());
  img.height = std::stol(next_token());
  img.maxval = std::stoi(next_token());
  in.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error("read_pgm: truncated raster");
  }
  return img;
}

}  // namespace softpick
