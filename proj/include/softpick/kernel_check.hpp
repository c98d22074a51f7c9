#pragma once

#include "softpick/flash.hpp"
#include "softpick/numerics.hpp"
#include "softpick/scorers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace softpick {

struct CheckCase {
  std::string name;
  double error = 0;
  double tolerance = 0;

  bool passed() const { return error <= tolerance; }  // false for NaN
};

struct KernelCheckOptions {
  std::vector<Index> sizes{17, 32, 64};
  std::vector<Index> blocks{8, 16, 32};
  bool f32 = true;
  bool f64 = true;
  std::vector<ScorerTag> scorers{ScorerTag::Softpick, ScorerTag::Softmax};
  Index head_dim = 16;
  std::uint64_t seed = 0;
  bool gradients = true;      // finite-difference suite (f64)
  bool corrupt_rescale = false;
};

inline constexpr double kForwardTolF64 = 1e-10;
inline constexpr double kForwardTolF32 = 1e-4;
inline constexpr double kGradientTol = 1e-5;

/// ||a - b||_inf / max(1, ||b||_inf)
double forward_error(const Matrix<double>& a, const Matrix<double>& b);

/// ||a - b||_inf / ||b||_inf, or ||a||_inf when b is zero.
double normwise_rel_error(const Matrix<double>& a, const Matrix<double>& b);

/// Tiled vs reference forward over every size, block, dtype, scorer and
/// causal setting; then, if enabled, tiled backward vs central differences.
std::vector<CheckCase> run_kernel_checks(const KernelCheckOptions& opts);

/// Random Q, K, V (N x d, unit normal) whose visible scaled scores stay at
/// least `margin` away from zero, so central differences never straddle the
/// rectifier kink.
struct QkvSample {
  Matrix<double> q, k, v;
};
QkvSample kink_free_qkv(Index n, Index d, double scale, bool causal, double margin, Rng& rng);

struct FdGrads {
  Matrix<double> dQ, dK, dV;
};

/// Central differences of <G, reference_attention(Q, K, V).O>.
FdGrads finite_difference_grads(const QkvSample& s, const Matrix<double>& g, const AttentionOptions<double>& opts,
                                double h = 1e-6);

}  // namespace softpick
