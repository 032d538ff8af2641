#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cae/cae.hpp"

namespace cae::test {

struct GradientSample {
  std::string parameter;
  std::size_t index;
  double analytic, numeric;
  // The stencil [x - h, x + h] contains a ReLU kink, so the quotient measures
  // the kink rather than the derivative.
  bool straddles_kink;
};

// Relative error used by every finite-difference check.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares the analytic gradient of `loss` (which rebuilds its graph on each
// call) with central differences at `entries` of `param`.
//
// Kinks are detected from the loss at x, x +- h/2 and x +- h. On a smooth
// stretch the central quotients at h and h/2 agree to O(h^2) and so do the
// scaled second differences; a kink shifts one or the other by a fraction of
// the slope jump wherever it sits inside the stencil. Rounding noise in the
// loss is measured directly from offsets far below h, so a noisy but smooth
// entry is compared against the tolerance rather than mistaken for a kink.
inline std::vector<GradientSample> check_gradient(const std::function<Var<double>()>& loss, const std::string& name,
                                                  Var<double> param, const std::vector<std::size_t>& entries,
                                                  double step = 1e-4) {
  param.zero_grad();
  param.set_requires_grad(true);
  backward(loss());
  const Tensor<double> grad = param.grad();
  std::vector<GradientSample> out;
  for (std::size_t i : entries) {
    double& w = param.mutable_value()[i];
    const double saved = w;
    auto at = [&](double offset) {
      w = saved + offset;
      const double v = loss().value()[0];
      w = saved;
      return v;
    };
    const double f0 = at(0), fp = at(step), fm = at(-step), fph = at(step / 2), fmh = at(-step / 2);
    const double central = (fp - fm) / (2 * step), central_half = (fph - fmh) / step;
    const double curve = (fp - 2 * f0 + fm) / step, curve_half = 4 * (fph - 2 * f0 + fmh) / step;
    double rounding = std::numeric_limits<double>::epsilon() * std::abs(f0);
    for (int k = 1; k <= 3; ++k) {
      const double tiny = k * 1e-6 * step;
      rounding = std::max(rounding, std::abs(at(tiny) - f0 - tiny * central));
    }
    const double scale = 1e-4 * std::max({std::abs(central), std::abs(central_half), 1e-8});
    const bool kink = std::abs(central - central_half) > scale + 8 * rounding / step ||
                      std::abs(curve - curve_half) > scale + 32 * rounding / step;
    out.push_back({name, i, grad[i], central, kink});
  }
  return out;
}

}  // namespace cae::test
