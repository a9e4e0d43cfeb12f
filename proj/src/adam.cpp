#include "deml/adam.hpp"

#include <cmath>

#include "deml/errors.hpp"

namespace deml {

void adam_step(std::vector<ParamGroup>& groups, AdamState& state) {
  const AdamConfig& cfg = state.config;
  std::size_t total = 0;
  for (const ParamGroup& g : groups) {
    if (!(g.lr_multiplier > 0.0)) {
      throw ParameterError("param group '" + g.id + "' has non-positive lr multiplier");
    }
    for (const Tensor& t : g.tensors) {
      if (!t.has_grad()) {
        throw GradientError("param group '" + g.id +
                            "': unpopulated gradient for tensor of shape " +
                            shape_string(t.shape()));
      }
    }
    total += g.tensors.size();
  }

  if (state.first_moment.empty()) {
    for (const ParamGroup& g : groups) {
      for (const Tensor& t : g.tensors) {
        state.first_moment.emplace_back(t.size(), 0.0);
        state.second_moment.emplace_back(t.size(), 0.0);
      }
    }
  }
  if (state.first_moment.size() != total) {
    throw DimensionError("adam state holds " + std::to_string(state.first_moment.size()) +
                         " buffers but groups hold " + std::to_string(total) + " tensors");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  std::size_t slot = 0;
  for (ParamGroup& g : groups) {
    const double lr = cfg.lr * g.lr_multiplier;
    const double decay = g.decay ? cfg.weight_decay : 0.0;
    for (Tensor& p : g.tensors) {
      auto& m = state.first_moment[slot];
      auto& v = state.second_moment[slot];
      ++slot;
      if (m.size() != p.size()) {
        throw DimensionError("adam moment buffer does not match parameter shape " +
                             shape_string(p.shape()));
      }
      auto values = p.values();
      auto grad = p.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        values[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + decay * values[i]);
      }
      p.zero_grad();
    }
  }
}

}  // namespace deml
