#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "deml/errors.hpp"
#include "deml/gradcheck.hpp"
#include "deml/losses.hpp"
#include "deml/ops.hpp"

using namespace deml;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = g(rng);
  return Tensor({r, c}, std::move(v));
}

LearnerBank bank_of(std::vector<Tensor> es, std::size_t scales = 1) {
  LearnerBank b;
  b.scales = scales;
  b.branches = es.size() / scales;
  b.embeddings = std::move(es);
  return b;
}

// Direct evaluation of the weighted pair sum from an explicit pair list.
double deviance_oracle(const Tensor& e, const std::vector<int>& labels, const LossConfig& cfg) {
  const std::size_t n = e.dim(0), v = e.dim(1);
  struct Pair {
    bool same;
    double d;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      double dot = 0, np = 0, nq = 0;
      for (std::size_t k = 0; k < v; ++k) {
        dot += e[p * v + k] * e[q * v + k];
        np += e[p * v + k] * e[p * v + k];
        nq += e[q * v + k] * e[q * v + k];
      }
      pairs.push_back({labels[p] == labels[q], dot / std::sqrt(np * nq)});
    }
  }
  double pos = 0, neg = 0;
  for (const Pair& pr : pairs) (pr.same ? pos : neg) += 1;
  double total = 0;
  for (const Pair& pr : pairs) {
    const double sign = pr.same ? 1.0 : -1.0;
    const double gamma = pr.same ? cfg.gamma_pos : cfg.gamma_neg;
    total += std::log1p(std::exp(-sign * cfg.alpha * (pr.d - cfg.beta) * gamma)) /
             (pr.same ? pos : neg);
  }
  return total;
}

}  // namespace

TEST(Binomial, PairTermAtTranslationPoint) {
  const LossConfig cfg;
  for (double w : {1.0, 3.0, 17.0}) {
    EXPECT_NEAR(binomial_pair_term(true, cfg.beta, w, cfg), std::log(2.0) / w, 1e-12);
    EXPECT_NEAR(binomial_pair_term(false, cfg.beta, w, cfg), std::log(2.0) / w, 1e-12);
  }
}

TEST(Binomial, PairTermPointValues) {
  const LossConfig cfg;
  EXPECT_NEAR(binomial_pair_term(true, 1.0, 1.0, cfg), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(binomial_pair_term(true, 1.0, 1.0, cfg), 0.31326, 1e-5);
  EXPECT_NEAR(binomial_pair_term(false, 1.0, 1.0, cfg), 35.0, 1e-12);
}

TEST(Binomial, EqualCosinesGiveTwoLnTwo) {
  // Three unit vectors at 60 degrees: every pair has cosine 0.5.
  const Tensor e = Tensor::matrix({{1, 1, 0}, {0, 1, 1}, {1, 0, 1}});
  const std::vector<int> labels{0, 0, 1};
  const LossConfig cfg;
  const Tensor loss = binomial_deviance_learner(e, PairBatch::from_labels(labels), cfg);
  EXPECT_NEAR(loss.item(), 2.0 * std::log(2.0), 1e-12);
}

TEST(Binomial, MatchesPairListOracle) {
  std::mt19937_64 rng(1);
  const LossConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor e = random_matrix(8, 5, rng);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
    const double got = binomial_deviance_learner(e, PairBatch::from_labels(labels), cfg).item();
    EXPECT_NEAR(got, deviance_oracle(e, labels, cfg), 1e-12);
  }
}

TEST(Binomial, BankAveragesLearners) {
  std::mt19937_64 rng(2);
  const LossConfig cfg;
  const std::vector<int> labels{0, 0, 1, 1};
  const Tensor a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng);
  const double want = 0.5 * (deviance_oracle(a, labels, cfg) + deviance_oracle(b, labels, cfg));
  EXPECT_NEAR(binomial_deviance(bank_of({a, b}), labels, cfg).item(), want, 1e-12);
}

TEST(Binomial, ScaleInvariantPerSample) {
  std::mt19937_64 rng(3);
  const LossConfig cfg;
  const std::vector<int> labels{0, 0, 1, 1, 2};
  const PairBatch batch = PairBatch::from_labels(labels);
  Tensor e = random_matrix(5, 4, rng);
  const double before = binomial_deviance_learner(e, batch, cfg).item();
  for (std::size_t k = 0; k < 4; ++k) e.values()[2 * 4 + k] *= 7.0;
  EXPECT_NEAR(binomial_deviance_learner(e, batch, cfg).item(), before, 1e-9);
}

TEST(Binomial, MonotoneInCosine) {
  const LossConfig cfg;
  double prev_pos = INFINITY, prev_neg = -INFINITY;
  for (int k = -20; k <= 20; ++k) {
    const double d = k / 20.0;
    const double pos = binomial_pair_term(true, d, 1.0, cfg);
    const double neg = binomial_pair_term(false, d, 1.0, cfg);
    EXPECT_LT(pos, prev_pos);
    EXPECT_GT(neg, prev_neg);
    prev_pos = pos;
    prev_neg = neg;
  }
}

TEST(Binomial, DuplicatedPairMultisetLeavesLossUnchanged) {
  // Doubling every pair doubles both the sums and the counts w_pq.
  const LossConfig cfg;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<bool, double>> pairs;
  for (int i = 0; i < 12; ++i) pairs.emplace_back(i % 3 == 0, u(rng));
  auto total = [&](int copies) {
    double pos = 0, neg = 0;
    for (const auto& p : pairs) (p.first ? pos : neg) += copies;
    double s = 0;
    for (int c = 0; c < copies; ++c) {
      for (const auto& p : pairs) s += binomial_pair_term(p.first, p.second, p.first ? pos : neg, cfg);
    }
    return s;
  };
  EXPECT_NEAR(total(2), total(1), 1e-9);
  EXPECT_NEAR(total(5), total(1), 1e-9);
}

TEST(Binomial, DuplicatedBatchMatchesOracle) {
  // Duplicating the samples adds copy pairs at cosine 1; the library still
  // agrees with the explicit pair list.
  std::mt19937_64 rng(5);
  const LossConfig cfg;
  const Tensor e = random_matrix(4, 3, rng);
  std::vector<double> twice(e.values().begin(), e.values().end());
  twice.insert(twice.end(), e.values().begin(), e.values().end());
  const Tensor d({8, 3}, twice);
  const std::vector<int> labels{0, 0, 1, 1, 0, 0, 1, 1};
  EXPECT_NEAR(binomial_deviance_learner(d, PairBatch::from_labels(labels), cfg).item(),
              deviance_oracle(d, labels, cfg), 1e-12);
}

TEST(Binomial, RejectsBatchesWithoutBothPairKinds) {
  const std::vector<int> same{1, 1, 1};
  const std::vector<int> distinct{1, 2, 3};
  EXPECT_THROW(PairBatch::from_labels(same), InvalidBatchError);
  EXPECT_THROW(PairBatch::from_labels(distinct), InvalidBatchError);
  const PairBatch ok = PairBatch::from_labels(std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(ok.positives, 2u);
  EXPECT_EQ(ok.negatives, 4u);
}

TEST(Binomial, ZeroEmbeddingThrows) {
  const Tensor e = Tensor::matrix({{1, 0}, {0, 0}, {0, 1}, {1, 1}});
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_THROW(binomial_deviance_learner(e, PairBatch::from_labels(labels), LossConfig{}),
               DegenerateVectorError);
}

TEST(ActivationDecay, HandValue) {
  EXPECT_NEAR(activation_decay(bank_of({Tensor::matrix({{3, 4}})}), LossConfig{}).item(), 0.175,
              1e-15);
}

TEST(ActivationDecay, ZeroAndHomogeneity) {
  std::mt19937_64 rng(6);
  EXPECT_EQ(activation_decay(bank_of({Tensor({3, 4})}), LossConfig{}).item(), 0.0);
  const Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
  const double base = activation_decay(bank_of({a, b}), LossConfig{}).item();
  const double doubled = activation_decay(bank_of({scale(a, 2.0), scale(b, 2.0)}), LossConfig{}).item();
  EXPECT_NEAR(doubled, 4.0 * base, 1e-15);
}

TEST(ActivationDecay, NormalizedByLearnersAndBatch) {
  std::mt19937_64 rng(7);
  const Tensor a = random_matrix(5, 3, rng), b = random_matrix(5, 3, rng);
  double sq = 0.0;
  for (const Tensor& t : {a, b}) {
    for (double x : t.values()) sq += x * x;
  }
  const LossConfig cfg;
  EXPECT_NEAR(activation_decay(bank_of({a, b}), cfg).item(), cfg.lambda1 / (2.0 * 2 * 5) * sq,
              1e-15);
}

TEST(Ntri, OrthonormalRowsGiveZero) {
  const double s = 1.0 / std::sqrt(2.0);
  const std::vector<Tensor> ws{Tensor::matrix({{s, s, 0}, {-s, s, 0}}), Tensor::matrix({{0, 0, 1}})};
  EXPECT_NEAR(ntri_regularizer(ws, LossConfig{}).item(), 0.0, 1e-12);
}

TEST(Ntri, TrivialSolutionAndHandValue) {
  const LossConfig cfg;
  const std::vector<Tensor> zero{Tensor({3, 5})};
  EXPECT_NEAR(ntri_regularizer(zero, cfg).item(), cfg.lambda2 * 3, 1e-15);
  const std::vector<Tensor> row{Tensor::matrix({{2, 0}})};
  EXPECT_NEAR(ntri_regularizer(row, cfg).item(), 2.25, 1e-15);
}

TEST(TotalLoss, SumsComponentsAndSkipsEmpty) {
  const Tensor t = total_loss(Tensor::scalar(1.0), Tensor::scalar(0.2), Tensor::scalar(0.1),
                              Tensor::scalar(0.05));
  EXPECT_NEAR(t.item(), 1.35, 1e-15);
  EXPECT_NEAR(total_loss(Tensor::scalar(1.0), Tensor::scalar(0.2), Tensor::scalar(0.1), Tensor()).item(),
              1.3, 1e-15);
  EXPECT_EQ(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)).item(),
            0.0);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  std::mt19937_64 rng(8);
  const LossConfig cfg;
  const Tensor e0 = random_matrix(4, 3, rng);
  const std::vector<int> labels{0, 0, 1, 1};
  auto grad = [&](int which) {
    Tensor e = e0.clone();
    e.set_requires_grad();
    const LearnerBank bank = bank_of({e});
    const Tensor metric = binomial_deviance(bank, labels, cfg);
    const Tensor act = activation_decay(bank, cfg);
    const Tensor out = which == 0 ? total_loss(metric, act, Tensor(), Tensor()) : which == 1 ? metric : act;
    out.backward();
    return std::vector<double>(e.grad().begin(), e.grad().end());
  };
  const auto all = grad(0), m = grad(1), a = grad(2);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_NEAR(all[i], m[i] + a[i], 1e-14);
}

TEST(Losses, Gradcheck) {
  std::mt19937_64 rng(9);
  const LossConfig cfg;
  const std::vector<int> labels{0, 0, 1, 1, 2};
  const double metric = check_gradient(
      [&](const std::vector<Tensor>& in) { return binomial_deviance(bank_of({in[0], in[1]}), labels, cfg); },
      {random_matrix(5, 3, rng), random_matrix(5, 3, rng)});
  const double act = check_gradient(
      [&](const std::vector<Tensor>& in) { return activation_decay(bank_of({in[0]}), cfg); },
      {random_matrix(5, 3, rng)});
  const double ntri = check_gradient(
      [&](const std::vector<Tensor>& in) { return ntri_regularizer(in, cfg); },
      {random_matrix(3, 6, rng), random_matrix(2, 6, rng)});
  EXPECT_LT(metric, 1e-4);
  EXPECT_LT(act, 1e-4);
  EXPECT_LT(ntri, 1e-4);
}
