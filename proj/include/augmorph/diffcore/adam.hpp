#pragma once

#include <cstdint>
#include <string_view>

#include "augmorph/diffcore/tensor.hpp"

namespace augmorph::diffcore {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter optimizer state. Moments start at zero.
struct AdamState {
  std::int64_t step_count = 0;
  Tensor first_moment;
  Tensor second_moment;
  AdamConfig config;

  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig cfg)
      : first_moment(shape), second_moment(shape), config(cfg) {}
};

/// One bias-corrected Adam step applied in place to `params`.
/// Throws NumericError naming `param_name` on a non-finite gradient.
void adam_update(Tensor& params, const Tensor& grads, AdamState& state, std::string_view param_name = "param");

}  // namespace augmorph::diffcore
