#include "deml/losses.hpp"

#include <cmath>
#include <string>

#include "deml/errors.hpp"
#include "deml/ops.hpp"

namespace deml {
namespace {

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Exponent argument of one pair and its derivative with respect to D.
struct PairSlope {
  double argument;
  double d_argument;
};

PairSlope pair_slope(bool same_class, double cosine, const LossConfig& cfg) {
  const double sign = same_class ? 1.0 : -1.0;
  const double gamma = same_class ? cfg.gamma_pos : cfg.gamma_neg;
  return {-sign * cfg.alpha * (cosine - cfg.beta) * gamma, -sign * cfg.alpha * gamma};
}

}  // namespace

PairBatch PairBatch::from_labels(std::span<const int> labels) {
  PairBatch b;
  b.labels.assign(labels.begin(), labels.end());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    for (std::size_t q = p + 1; q < labels.size(); ++q) {
      (labels[p] == labels[q] ? b.positives : b.negatives) += 1;
    }
  }
  if (b.positives == 0 || b.negatives == 0) {
    throw InvalidBatchError("batch of " + std::to_string(labels.size()) + " samples has " +
                            std::to_string(b.positives) + " positive and " +
                            std::to_string(b.negatives) +
                            " negative pairs; both must be nonzero");
  }
  return b;
}

double binomial_pair_term(bool same_class, double cosine, double pair_count,
                          const LossConfig& cfg) {
  return stable_softplus(pair_slope(same_class, cosine, cfg).argument) / pair_count;
}

Tensor binomial_deviance_learner(const Tensor& embeddings, const PairBatch& batch,
                                 const LossConfig& cfg) {
  if (embeddings.ndim() != 2 || embeddings.dim(0) != batch.labels.size()) {
    throw DimensionError("binomial_deviance: embeddings " + shape_string(embeddings.shape()) +
                         " do not match a batch of " + std::to_string(batch.labels.size()));
  }
  const std::size_t n = embeddings.dim(0), v = embeddings.dim(1);
  auto ev = embeddings.values();
  std::vector<double> norms(n);
  for (std::size_t p = 0; p < n; ++p) {
    double sq = 0.0;
    for (std::size_t i = 0; i < v; ++i) sq += ev[p * v + i] * ev[p * v + i];
    norms[p] = std::sqrt(sq);
    if (!(norms[p] > 1e-12)) {
      throw DegenerateVectorError("binomial_deviance: embedding of sample " +
                                  std::to_string(p) + " has zero norm");
    }
  }

  // Per pair: cosine and dLoss/dD, kept for the backward pass.
  std::vector<double> cosines(n * n, 0.0), slopes(n * n, 0.0);
  double loss = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      double d = 0.0;
      for (std::size_t i = 0; i < v; ++i) d += ev[p * v + i] * ev[q * v + i];
      d /= norms[p] * norms[q];
      const bool same = batch.labels[p] == batch.labels[q];
      const double w = static_cast<double>(same ? batch.positives : batch.negatives);
      const PairSlope s = pair_slope(same, d, cfg);
      loss += stable_softplus(s.argument) / w;
      cosines[p * n + q] = d;
      slopes[p * n + q] = stable_sigmoid(s.argument) * s.d_argument / w;
    }
  }

  return make_result(
      {}, {loss}, {embeddings},
      [n, v, norms = std::move(norms), cosines = std::move(cosines),
       slopes = std::move(slopes)](detail::Node& self) {
        const double g = self.grad[0];
        const auto& ev = self.inputs[0]->value;
        auto ge = input_grad(self, 0);
        for (std::size_t p = 0; p < n; ++p) {
          for (std::size_t q = p + 1; q < n; ++q) {
            const double k = g * slopes[p * n + q];
            if (k == 0.0) continue;
            const double d = cosines[p * n + q];
            const double inv = 1.0 / (norms[p] * norms[q]);
            const double self_p = d / (norms[p] * norms[p]);
            const double self_q = d / (norms[q] * norms[q]);
            for (std::size_t i = 0; i < v; ++i) {
              const double ep = ev[p * v + i], eq = ev[q * v + i];
              ge[p * v + i] += k * (eq * inv - self_p * ep);
              ge[q * v + i] += k * (ep * inv - self_q * eq);
            }
          }
        }
      });
}

Tensor binomial_deviance(const LearnerBank& bank, std::span<const int> labels,
                         const LossConfig& cfg) {
  if (bank.learners() == 0) throw EmptyInputError("binomial_deviance: empty learner bank");
  const PairBatch batch = PairBatch::from_labels(labels);
  Tensor total;
  for (const Tensor& e : bank.embeddings) {
    Tensor term = binomial_deviance_learner(e, batch, cfg);
    total = total.empty() ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(bank.learners()));
}

Tensor activation_decay(const LearnerBank& bank, const LossConfig& cfg) {
  if (bank.learners() == 0) throw EmptyInputError("activation_decay: empty learner bank");
  Tensor total;
  for (const Tensor& e : bank.embeddings) {
    Tensor term = sum_squares(e);
    total = total.empty() ? term : add(total, term);
  }
  const double denom =
      2.0 * static_cast<double>(bank.learners()) * static_cast<double>(bank.batch_size());
  return scale(total, cfg.lambda1 / denom);
}

Tensor ntri_regularizer(std::span<const Tensor> learner_weights, const LossConfig& cfg) {
  if (learner_weights.empty()) throw EmptyInputError("ntri_regularizer: no learners");
  Tensor total;
  for (const Tensor& w : learner_weights) {
    if (w.ndim() != 2) {
      throw DimensionError("ntri_regularizer: learner weights must be a matrix, got " +
                           shape_string(w.shape()));
    }
    const std::size_t r = w.dim(0), c = w.dim(1);
    auto wv = w.values();
    // gram = w w^T - I
    std::vector<double> gram(r * r, 0.0);
    double value = 0.0;
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t b = 0; b < r; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < c; ++i) s += wv[a * c + i] * wv[b * c + i];
        if (a == b) s -= 1.0;
        gram[a * r + b] = s;
        value += s * s;
      }
    }
    Tensor term = make_result({}, {value}, {w},
                              [r, c, gram = std::move(gram)](detail::Node& self) {
                                // d/dw |G|^2 = 4 G w for symmetric G
                                const double g = self.grad[0];
                                const auto& wv = self.inputs[0]->value;
                                auto gw = input_grad(self, 0);
                                for (std::size_t a = 0; a < r; ++a)
                                  for (std::size_t b = 0; b < r; ++b) {
                                    const double k = 4.0 * g * gram[a * r + b];
                                    for (std::size_t i = 0; i < c; ++i)
                                      gw[a * c + i] += k * wv[b * c + i];
                                  }
                              });
    total = total.empty() ? term : add(total, term);
  }
  return scale(total, cfg.lambda2);
}

Tensor total_loss(const Tensor& metric, const Tensor& act, const Tensor& ntri,
                  const Tensor& adv) {
  Tensor total;
  for (const Tensor* t : {&metric, &act, &ntri, &adv}) {
    if (t->empty()) continue;
    total = total.empty() ? *t : add(total, *t);
  }
  return total.empty() ? Tensor::scalar(0.0) : total;
}

}  // namespace deml
