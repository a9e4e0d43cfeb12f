#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deml/tensor.hpp"

namespace deml {

struct GradcheckOptions {
  double step = 1e-5;
  double abs_floor = 1e-7;
  // Skip elements whose error reaches kink_threshold while the one-sided
  // differences disagree by more than that error (a ReLU switching inside
  // the stencil). Smooth points with a wrong gradient are still reported.
  bool exclude_kinks = false;
  double kink_threshold = 1e-4;
};

// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
double relative_error(double analytic, double numeric, double abs_floor = 1e-7);

// Compares the reverse-mode gradient of the scalar `f(inputs)` against
// central differences for every element of every input. Inputs are marked
// as requiring gradients. Returns the largest relative error.
double check_gradient(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                      std::vector<Tensor> inputs, const GradcheckOptions& opts = {},
                      std::size_t* excluded = nullptr);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t kinks_excluded = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

// Every differentiable op, each loss and an end-to-end micro-model on
// seeded random inputs.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 1);

}  // namespace deml
