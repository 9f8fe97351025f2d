#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace dagkt::ad {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one pair per parameter, in registration order.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<Parameter* const> params, AdamConfig cfg = {});
};

/// One bias-corrected Adam update using the gradients stored on `params`.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace dagkt::ad
