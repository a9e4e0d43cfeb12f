#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "deml/tensor.hpp"

namespace deml {

inline constexpr std::size_t kCamHidden = 64;
inline constexpr std::size_t kAdversaryWidth = 64;

// Squeeze/gate weights of one channel-attention module. No biases.
struct CamParams {
  Tensor w1;  // [hidden x C]
  Tensor w2;  // [C x hidden]

  std::size_t channels() const { return w1.dim(1); }
  static CamParams random(std::size_t channels, std::size_t hidden, double stddev,
                          std::mt19937_64& rng);
  static CamParams zeros(std::size_t channels, std::size_t hidden = kCamHidden);
};

// Per-channel gates sigmoid(W2 relu(W1 avgpool(U))). U is [C x H x W] giving
// [C], or [N x C x H x W] giving [N x C].
Tensor cam_gates(const Tensor& feature_map, const CamParams& params);

// Feature map with channel c multiplied by its gate.
Tensor cam_forward(const Tensor& feature_map, const CamParams& params);

// Two bias-free fully connected layers with a ReLU in between:
// learner embedding -> hidden -> output.
struct AdversaryNet {
  Tensor w1;  // [hidden x input]
  Tensor w2;  // [output x hidden]

  static AdversaryNet random(std::size_t input, std::size_t hidden, std::size_t output,
                             std::mt19937_64& rng);
  // e is [v] or [N x v].
  Tensor forward(const Tensor& embedding) const;
};

// lambda0 * sum over branch pairs j < j' of |F(e_j) - F(e_j')|^2, averaged
// over rows when the embeddings are [N x v] batches. With `reverse` each
// embedding passes through a gradient-reversal node before the adversary, so
// upstream parameters ascend the loss the adversary descends.
Tensor adversary_loss(std::span<const Tensor> embeddings, const AdversaryNet& net,
                      double lambda0, bool reverse = true);

}  // namespace deml
