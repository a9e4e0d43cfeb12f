#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deml/learner_bank.hpp"
#include "deml/tensor.hpp"

namespace deml {

struct LossConfig {
  double alpha = 2.0;       // scaling
  double beta = 0.5;        // translation
  double gamma_pos = 1.0;   // penalty on positive pairs
  double gamma_neg = 35.0;  // penalty on negative pairs
  double lambda0 = 1.0;     // adversary
  double lambda1 = 0.014;   // activation decay
  double lambda2 = 0.25;    // non-trivial-solution term
};

// Labels of one batch with its within-batch pair counts. Construction
// rejects batches without both positive and negative pairs.
struct PairBatch {
  std::vector<int> labels;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  static PairBatch from_labels(std::span<const int> labels);
};

// One pair's contribution log(1 + exp(-(2s-1) alpha (D - beta) gamma)) / w.
double binomial_pair_term(bool same_class, double cosine, double pair_count,
                          const LossConfig& cfg);

// Binomial deviance of a single learner, summed over all unordered pairs of
// rows of `embeddings` ([N x v]) with cosine similarity as D.
Tensor binomial_deviance_learner(const Tensor& embeddings, const PairBatch& batch,
                                 const LossConfig& cfg);

// Mean over the bank's learners of binomial_deviance_learner.
Tensor binomial_deviance(const LearnerBank& bank, std::span<const int> labels,
                         const LossConfig& cfg);

// lambda1 / (2 I J N) * sum of squared embedding norms.
Tensor activation_decay(const LearnerBank& bank, const LossConfig& cfg);

// lambda2 * sum over learners of |w w^T - I|_F^2.
Tensor ntri_regularizer(std::span<const Tensor> learner_weights, const LossConfig& cfg);

// Sum of the supplied components; an empty tensor is skipped.
Tensor total_loss(const Tensor& metric, const Tensor& act, const Tensor& ntri,
                  const Tensor& adv);

}  // namespace deml
