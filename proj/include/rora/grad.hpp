#pragma once

// Analytic adapter gradients, the SGD update, and the closed-form output
// increment after one step from B = 0. Central differences serve as the
// independent check on the chain-rule expressions.

#include <cmath>
#include <string>
#include <utility>

#include "rora/adapters.hpp"
#include "rora/linalg.hpp"

namespace rora {

// delta_i = dL/dw_i for each adapter output.
struct UpstreamGradient {
  Vector delta;
};

struct AdapterGrads {
  Matrix dA;  // r x p_in
  Matrix dB;  // p_out x r
};

struct Hyperparams {
  double eta = 0.01;
  std::size_t steps = 100;
  std::size_t batch = 32;

  void validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ArgumentError("eta must be finite and >= 0");
    if (batch == 0) throw ArgumentError("batch must be >= 1");
  }

  bool operator==(const Hyperparams&) const = default;
};

// dA = gamma * B^T delta x^T,  dB = gamma * delta (A x)^T
inline AdapterGrads grad_adapter(const LowRankAdapter& adapter, const Vector& x,
                                 const UpstreamGradient& up) {
  const auto& A = adapter.A;
  const auto& B = adapter.B;
  if (x.size() != A.cols() || up.delta.size() != B.rows()) {
    throw DimensionError("grad_adapter: x length " + std::to_string(x.size()) + ", delta length " +
                         std::to_string(up.delta.size()) + " vs adapter " + B.shape() + "*" +
                         A.shape());
  }
  const Vector bt_delta = matvec_transposed(B, up.delta);
  const Vector ax = matvec(A, x);
  return {adapter.gamma * outer(bt_delta, x), adapter.gamma * outer(up.delta, ax)};
}

// Mean gradient over a batch; row n of `inputs` pairs with row n of `deltas`.
inline AdapterGrads grad_adapter_batch(const LowRankAdapter& adapter, const Matrix& inputs,
                                       const Matrix& deltas) {
  if (inputs.rows() != deltas.rows() || inputs.cols() != adapter.A.cols() ||
      deltas.cols() != adapter.B.rows()) {
    throw DimensionError("grad_adapter_batch: inputs " + inputs.shape() + ", deltas " +
                         deltas.shape() + " vs adapter " + adapter.B.shape() + "*" +
                         adapter.A.shape());
  }
  // G = mean_n delta_n x_n^T, then dA = gamma B^T G and dB = gamma G A^T.
  const double inv_n = 1.0 / static_cast<double>(inputs.rows());
  const Matrix g = inv_n * matmul(transpose(deltas), inputs);
  return {adapter.gamma * matmul(transpose(adapter.B), g),
          adapter.gamma * matmul(g, transpose(adapter.A))};
}

namespace detail {

template <class Output, class LossFn>
AdapterGrads central_differences(LowRankAdapter& adapter, Output&& output, LossFn&& loss,
                                 double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff_grad: h must be > 0");
  auto eval = [&] {
    const double v = loss(output(adapter));
    if (!std::isfinite(v)) throw NumericError("finite_diff_grad: non-finite loss");
    return v;
  };
  auto diff = [&](Matrix& param, Matrix& grad) {
    auto p = param.values();
    auto g = grad.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = eval();
      p[i] = saved - h;
      const double down = eval();
      p[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
  };
  AdapterGrads grads{Matrix(adapter.A.rows(), adapter.A.cols()),
                     Matrix(adapter.B.rows(), adapter.B.cols())};
  diff(adapter.A, grads.dA);
  diff(adapter.B, grads.dB);
  return grads;
}

}  // namespace detail

// Loss is a function of the adapter increment gamma*B*A*x.
template <class LossFn>
AdapterGrads finite_diff_grad(LowRankAdapter adapter, const Vector& x, LossFn&& loss_fn,
                              double h = 1e-5) {
  return detail::central_differences(
      adapter, [&](const LowRankAdapter& a) { return increment(a, x); },
      std::forward<LossFn>(loss_fn), h);
}

// Loss is a function of the full layer output (m0 + gamma*B*A) x.
template <class LossFn>
AdapterGrads finite_diff_grad(const AdaptedLinear& layer, const Vector& x, LossFn&& loss_fn,
                              double h = 1e-5) {
  LowRankAdapter adapter = layer.adapter();
  const Vector base = matvec(layer.m0(), x);
  return detail::central_differences(
      adapter, [&](const LowRankAdapter& a) { return base + increment(a, x); },
      std::forward<LossFn>(loss_fn), h);
}

inline LowRankAdapter sgd_step(LowRankAdapter adapter, const AdapterGrads& grads, double eta,
                               bool freeze_A) {
  require_same_shape(adapter.B, grads.dB, "sgd_step dB");
  require_same_shape(adapter.A, grads.dA, "sgd_step dA");
  auto b = adapter.B.values();
  auto db = grads.dB.values();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= eta * db[i];
  if (!freeze_A) {
    auto a = adapter.A.values();
    auto da = grads.dA.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= eta * da[i];
  }
  return adapter;
}

// Output increment at x_next after one SGD step on B (A frozen) from B = 0
// with upstream gradient delta at x_prev:
//
//   w_i = -eta * delta_i * gamma^2 * sum_k (A x_prev)_k (A x_next)_k
inline Vector two_step_increment(const Matrix& A, const Vector& x_prev, const Vector& x_next,
                                 double eta, const Vector& delta, double gamma) {
  if (x_prev.size() != A.cols() || x_next.size() != A.cols()) {
    throw DimensionError("two_step_increment: inputs of length " + std::to_string(x_prev.size()) +
                         "/" + std::to_string(x_next.size()) + " vs A " + A.shape());
  }
  const double inner = dot(matvec(A, x_prev), matvec(A, x_next));
  const double scale = -eta * gamma * gamma * inner;
  Vector w(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) w[i] = scale * delta[i];
  return w;
}

}  // namespace rora
