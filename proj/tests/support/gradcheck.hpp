#pragma once

// Central finite-difference oracle for the autodiff engine. Test-only: it
// evaluates ops with recording disabled and never looks at backward code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "levrl/rng.hpp"
#include "levrl/tensor.hpp"

LEVRL_NAMESPACE_BEGIN
namespace testing {

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double relative_error = 0;
  std::size_t checked = 0;    // scalar inputs compared
};

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, double min_abs = 0.0) {
  std::vector<Real> v(shape_size(shape));
  for (auto& x : v) {
    double r = (2.0 * rng.uniform() - 1.0) * scale;
    if (std::abs(r) < min_abs) r = r < 0 ? r - min_abs : r + min_abs;
    x = Real(r);
  }
  return Tensor(std::move(shape), std::move(v), true);
}

/// Projects the op output onto fixed random weights and compares the
/// analytic gradient of that scalar with (f(x+eps) - f(x-eps)) / 2eps for
/// every element of every input that requires a gradient.
/// Returns the norm-wise relative error over all compared elements.
inline GradCheckResult gradcheck(const OpFn& op, std::vector<Tensor> inputs, double eps, Rng& rng) {
  Tensor probe_out;
  {
    NoGradGuard no_grad;
    probe_out = op(inputs);
  }
  std::vector<Real> weights(probe_out.size());
  for (auto& w : weights) w = Real(2.0 * rng.uniform() - 1.0);
  const Tensor weight_tensor(probe_out.shape(), weights);

  auto projected = [&](const std::vector<Tensor>& xs) {
    NoGradGuard no_grad;
    const Tensor out = op(xs);
    double total = 0;
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) total += double(v[i]) * double(weights[i]);
    return total;
  };

  for (auto& x : inputs) x.zero_grad();
  const Tensor out = op(inputs);
  Tensor loss = sum(mul(out, weight_tensor));
  loss.backward();

  // Norm-wise relative error over the concatenated gradient of all inputs.
  GradCheckResult result;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto values = x.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      const Real plus = Real(double(saved) + eps);
      const Real minus = Real(double(saved) - eps);
      values[i] = plus;
      const double up = projected(inputs);
      values[i] = minus;
      const double down = projected(inputs);
      values[i] = saved;
      const double numeric = (up - down) / (double(plus) - double(minus));
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++result.checked;
    }
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-3});
  result.relative_error = std::sqrt(diff2) / scale;
  return result;
}

}  // namespace testing
LEVRL_NAMESPACE_END
