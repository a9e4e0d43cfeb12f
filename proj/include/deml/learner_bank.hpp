#pragma once

#include <cstddef>
#include <vector>

#include "deml/tensor.hpp"

namespace deml {

// Outputs of the I x J channel-attention learners for one batch, ordered
// scale-major, branch-minor. Each entry is [batch x learner_dim].
struct LearnerBank {
  std::size_t scales = 0;
  std::size_t branches = 0;
  std::vector<Tensor> embeddings;

  const Tensor& at(std::size_t scale, std::size_t branch) const {
    return embeddings[scale * branches + branch];
  }
  std::size_t learners() const { return embeddings.size(); }
  std::size_t batch_size() const { return embeddings.empty() ? 0 : embeddings.front().dim(0); }
  std::size_t learner_dim() const { return embeddings.empty() ? 0 : embeddings.front().dim(1); }
};

}  // namespace deml
