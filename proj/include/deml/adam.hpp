#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deml/tensor.hpp"

namespace deml {

// A set of parameters sharing a learning-rate multiplier. `decay` selects
// whether decoupled weight decay applies (weights yes, biases no).
struct ParamGroup {
  std::string id;
  std::vector<Tensor> tensors;
  double lr_multiplier = 1.0;
  bool decay = true;
};

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-4;
};

// Moment buffers are laid out group-major, tensor-minor, matching the
// ParamGroup list handed to adam_step.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One bias-corrected Adam update with decoupled weight decay, then zeroes the
// gradients. Effective learning rate is config.lr * group.lr_multiplier.
// Throws GradientError when a parameter has no populated gradient.
void adam_step(std::vector<ParamGroup>& groups, AdamState& state);

}  // namespace deml
