#pragma once

// Central finite-difference gradient oracle. Independent of the tape: it only
// evaluates the forward function on perturbed copies of the inputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "regavae/numerics/tensor.hpp"

namespace regavae::test_support {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

using ScalarFn = std::function<nn::Tensor(nn::Tape&)>;

// `params` must be leaves read by `fn`. Analytic grads come from one tape
// backward; numeric grads perturb each parameter entry by +-step in place.
// `max_entries` caps entries checked per tensor (strided) for big tensors.
inline GradCheckResult grad_check(const ScalarFn& fn, std::vector<nn::Tensor> params,
                                  double step = 1e-5, double floor = 1e-6,
                                  std::size_t max_entries = 0) {
  nn::Tape tape;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  nn::Tensor loss = fn(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].mutable_data();
    std::size_t stride = 1;
    if (max_entries && data.size() > max_entries) stride = data.size() / max_entries;
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double original = data[i];
      data[i] = original + step;
      nn::Tape up;
      const double f_up = fn(up).item();
      data[i] = original - step;
      nn::Tape down;
      const double f_down = fn(down).item();
      data[i] = original;
      const double numeric = (f_up - f_down) / (2.0 * step);
      result.max_rel_error =
          std::max(result.max_rel_error, relative_error(analytic[t][i], numeric, floor));
      result.max_abs_error =
          std::max(result.max_abs_error, std::abs(analytic[t][i] - numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace regavae::test_support
