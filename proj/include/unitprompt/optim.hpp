#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "unitprompt/tensor.hpp"

namespace unitprompt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments for an ordered list of parameters.
struct AdamState {
  std::size_t step = 0;
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One bias-corrected Adam update applied in place to every parameter.
// grads[i] must have the same length as params[i]; moments are created on the
// first call.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state);

// Builds a scalar from the given leaves; must be deterministic.
using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Max over all parameter coordinates of
//   |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& fn, std::span<const Tensor> params, double h = 1e-5);

}  // namespace unitprompt
