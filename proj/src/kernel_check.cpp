#include "softpick/kernel_check.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace softpick {

double forward_error(const Matrix<double>& a, const Matrix<double>& b) {
  require_same_shape(a, b, "forward_error");
  if (a.size() == 0) return 0;
  const double diff = (a - b).cwiseAbs().maxCoeff();
  return diff / std::max(1.0, b.cwiseAbs().maxCoeff());
}

double normwise_rel_error(const Matrix<double>& a, const Matrix<double>& b) {
  require_same_shape(a, b, "normwise_rel_error");
  if (a.size() == 0) return 0;
  const double diff = (a - b).cwiseAbs().maxCoeff();
  const double ref = b.cwiseAbs().maxCoeff();
  return ref > 0 ? diff / ref : diff;
}

namespace {

ScorerKind scorer_for(ScorerTag tag) {
  switch (tag) {
    case ScorerTag::Softmax: return ScorerKind::softmax();
    case ScorerTag::Softpick: return ScorerKind::softpick();
    case ScorerTag::RectifiedOnlySoftmax: return ScorerKind::rectified_only();
    case ScorerTag::SoftmaxPlusOne: return ScorerKind::softmax_plus_one();
    case ScorerTag::ScalableSoftpick: return ScorerKind::softpick();
  }
  return ScorerKind::softpick();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

template <typename Scalar>
CheckCase forward_case(const QkvSample& s, ScorerTag tag, bool causal, Index block, bool corrupt) {
  AttentionOptions<Scalar> opts;
  opts.scorer = scorer_for(tag);
  opts.causal = causal;
  opts.scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(s.q.cols())));
  const Matrix<Scalar> q = s.q.cast<Scalar>(), k = s.k.cast<Scalar>(), v = s.v.cast<Scalar>();
  const auto ref = reference_attention(q, k, v, opts);
  KernelFaults faults;
  faults.invert_rescale = corrupt;
  const auto tiled = flash_forward(q, k, v, opts, BlockSpec{block, block}, faults);
  const double err = std::max(forward_error(tiled.O.template cast<double>(), ref.O.template cast<double>()),
                              forward_error(Matrix<double>(tiled.L.template cast<double>()),
                                            Matrix<double>(ref.L.template cast<double>())));
  const bool f32 = std::is_same_v<Scalar, float>;
  CheckCase c;
  c.name = fmt("forward %s %s %s N=%ld block=%ldx%ld", f32 ? "f32" : "f64", std::string(to_string(tag)).c_str(),
               causal ? "causal" : "full", static_cast<long>(s.q.rows()), static_cast<long>(block),
               static_cast<long>(block));
  c.error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
  c.tolerance = f32 ? kForwardTolF32 : kForwardTolF64;
  return c;
}

}  // namespace

QkvSample kink_free_qkv(Index n, Index d, double scale, bool causal, double margin, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    QkvSample s{randn<double>(rng, n, d), randn<double>(rng, n, d), randn<double>(rng, n, d)};
    const Matrix<double> scores = matmul(s.q, Matrix<double>(s.k.transpose())) * scale;
    bool ok = true;
    for (Index i = 0; i < n && ok; ++i) {
      for (Index j = 0; j < (causal ? i + 1 : n); ++j) {
        if (std::abs(scores(i, j)) < margin) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return s;
  }
  throw std::runtime_error("kink_free_qkv: no sample found; lower the margin");
}

FdGrads finite_difference_grads(const QkvSample& s, const Matrix<double>& g, const AttentionOptions<double>& opts,
                                double h) {
  auto objective = [&](const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v) {
    return (reference_attention(q, k, v, opts).O.array() * g.array()).sum();
  };
  auto sweep = [&](int which) {
    const Matrix<double>& base = which == 0 ? s.q : which == 1 ? s.k : s.v;
    Matrix<double> grad(base.rows(), base.cols());
    Matrix<double> x = base;
    for (Index i = 0; i < x.size(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + h;
      const double fp = which == 0 ? objective(x, s.k, s.v) : which == 1 ? objective(s.q, x, s.v) : objective(s.q, s.k, x);
      x.data()[i] = orig - h;
      const double fm = which == 0 ? objective(x, s.k, s.v) : which == 1 ? objective(s.q, x, s.v) : objective(s.q, s.k, x);
      x.data()[i] = orig;
      grad.data()[i] = (fp - fm) / (2 * h);
    }
    return grad;
  };
  return {sweep(0), sweep(1), sweep(2)};
}

std::vector<CheckCase> run_kernel_checks(const KernelCheckOptions& o) {
  std::vector<CheckCase> cases;
  Rng rng(o.seed);
  for (Index n : o.sizes) {
    const QkvSample s{randn<double>(rng, n, o.head_dim), randn<double>(rng, n, o.head_dim),
                      randn<double>(rng, n, o.head_dim)};
    for (ScorerTag tag : o.scorers) {
      for (bool causal : {true, false}) {
        for (Index b : o.blocks) {
          if (o.f64) cases.push_back(forward_case<double>(s, tag, causal, b, o.corrupt_rescale));
          if (o.f32) cases.push_back(forward_case<float>(s, tag, causal, b, o.corrupt_rescale));
        }
      }
    }
  }
  if (!o.gradients) return cases;

  const Index n = 32, d = 8;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (ScorerTag tag : o.scorers) {
    for (bool causal : {true, false}) {
      const QkvSample s = kink_free_qkv(n, d, scale, causal, 1e-4, rng);
      const Matrix<double> g = randn<double>(rng, n, d);
      AttentionOptions<double> opts;
      opts.scorer = scorer_for(tag);
      opts.causal = causal;
      opts.scale = scale;
      const auto fwd = flash_forward(s.q, s.k, s.v, opts, BlockSpec{8, 8});
      const auto an = flash_backward(s.q, s.k, s.v, fwd.O, g, fwd.L, opts, BlockSpec{8, 8}, &fwd.rowmax);
      const auto fd = finite_difference_grads(s, g, opts);
      const char* names[] = {"dQ", "dK", "dV"};
      const Matrix<double>* a[] = {&an.dQ, &an.dK, &an.dV};
      const Matrix<double>* b[] = {&fd.dQ, &fd.dK, &fd.dV};
      for (int i = 0; i < 3; ++i) {
        CheckCase c;
        c.name = fmt("backward f64 %s %s N=%ld d=%ld block=8x8 %s vs finite differences",
                     std::string(to_string(tag)).c_str(), causal ? "causal" : "full", static_cast<long>(n),
                     static_cast<long>(d), names[i]);
        c.error = normwise_rel_error(*a[i], *b[i]);
        c.tolerance = kGradientTol;
        cases.push_back(c);
      }
    }
  }
  return cases;
}

}  // namespace softpick
