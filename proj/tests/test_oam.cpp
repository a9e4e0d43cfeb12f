#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "deml/errors.hpp"
#include "deml/oam.hpp"
#include "deml/tensor.hpp"
#include "oracles.hpp"

using namespace deml;
using namespace deml::oam;

namespace {

WeightMatrix matrix_of(std::size_t h, std::size_t w, std::vector<double> weights) {
  WeightMatrix d;
  d.height = h;
  d.width = w;
  d.weights = std::move(weights);
  return d;
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

TEST(WeightMatrix, IdenticalLocationsFallBackToUniform) {
  const WeightMatrix d = build_weight_matrix(Tensor({2, 1, 2}, std::vector<double>{1, 1, 3, 3}));
  for (double v : d.weights) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(WeightMatrix, TwoDistinctLocationsSwap) {
  const WeightMatrix d = build_weight_matrix(Tensor({1, 1, 2}, std::vector<double>{0, 2}));
  EXPECT_EQ(d.weights, (std::vector<double>{0, 1, 1, 0}));
}

TEST(WeightMatrix, HandComputedRow) {
  const WeightMatrix d = build_weight_matrix(Tensor({1, 2, 2}, std::vector<double>{0, 1, 2, 4}));
  EXPECT_NEAR(d.at(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(d.at(0, 1), 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(d.at(0, 2), 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(d.at(0, 3), 4.0 / 7.0, 1e-15);
}

TEST(WeightMatrix, MatchesEuclideanOracleAndIsRowStochastic) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor u = oracle::random_map(3, 3, 4, rng);
    const WeightMatrix d = build_weight_matrix(u);
    const auto want = oracle::weight_matrix(u);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(d.weights[i], want[i], 1e-14);
    for (std::size_t a = 0; a < d.nodes(); ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < d.nodes(); ++b) s += d.at(a, b);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Propagate, UniformMatrixIsAFixedPoint) {
  const WeightMatrix d = matrix_of(2, 2, std::vector<double>(16, 0.25));
  for (int steps : {1, 3, 10}) {
    const AttentionProposal p = propagate(d, steps);
    for (double v : p.mass) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(Propagate, SymmetricTwoNodeStaysBalanced) {
  const WeightMatrix d = matrix_of(1, 2, {0, 1, 1, 0});
  for (int steps : {1, 2, 7}) {
    const AttentionProposal p = propagate(d, steps);
    EXPECT_DOUBLE_EQ(p.mass[0], 0.5);
    EXPECT_DOUBLE_EQ(p.mass[1], 0.5);
  }
}

TEST(Propagate, OutlierMatchesLongPowerIteration) {
  std::vector<double> values(9, 1.0);
  values[5] = 4.0;
  const WeightMatrix d = build_weight_matrix(Tensor({1, 3, 3}, values));
  const AttentionProposal p = propagate(d, 10);
  const auto stationary = oracle::power_iteration(d.weights, d.nodes(), 1000);
  EXPECT_LT(l1(p.mass, stationary), 1e-6);
  // Exactly identical neighbours make the chain periodic: every cluster cell
  // sends all its mass to the outlier, which spreads it back evenly, so
  // even step counts tie the outlier with the cluster.
  for (double v : p.mass) EXPECT_LE(v, p.mass[5] + 1e-15);
  const AttentionProposal odd = propagate(d, 11);
  for (std::size_t k = 0; k < 9; ++k) {
    if (k != 5) EXPECT_GT(odd.mass[5], odd.mass[k]);
  }
}

TEST(Propagate, NearIdenticalClusterMakesOutlierStrictlyMaximal) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<double> values(9);
  for (double& v : values) v = u(rng);
  values[5] = 4.0;
  const WeightMatrix d = build_weight_matrix(Tensor({1, 3, 3}, values));
  const AttentionProposal p = propagate(d, 10);
  EXPECT_EQ(std::max_element(p.mass.begin(), p.mass.end()) - p.mass.begin(), 5);
}

TEST(Propagate, MassConservedEveryStep) {
  std::mt19937_64 rng(12);
  const WeightMatrix d = build_weight_matrix(oracle::random_map(4, 4, 3, rng));
  for (int steps = 1; steps <= 12; ++steps) {
    const AttentionProposal p = propagate(d, steps);
    EXPECT_NEAR(std::accumulate(p.mass.begin(), p.mass.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Propagate, TenStepsReachStableState) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const WeightMatrix d = build_weight_matrix(oracle::random_map(4, 4, 5, rng));
    EXPECT_LT(l1(propagate(d, 10).mass, propagate(d, 1000).mass), 1e-4);
  }
}

TEST(Propagate, PermutationEquivariant) {
  std::mt19937_64 rng(14);
  const std::size_t c = 3, n = 16;
  const Tensor u = oracle::random_map(4, 4, c, rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  // Location k of the permuted map holds location perm[k] of the original.
  std::vector<double> moved(u.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t k = 0; k < n; ++k) moved[ch * n + k] = u[ch * n + perm[k]];
  }
  const AttentionProposal a = propagate(build_weight_matrix(u));
  const AttentionProposal b = propagate(build_weight_matrix(Tensor({c, 4, 4}, moved)));
  for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(b.mass[k], a.mass[perm[k]], 1e-14);
}

TEST(Propagate, PlantedOutlierTakesMaximalMass) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t where = 0;
    const Tensor u = oracle::planted_outlier_map(4, 4, 3, 10.0, rng, &where);
    const AttentionProposal p = propagate(build_weight_matrix(u));
    for (std::size_t k = 0; k < p.mass.size(); ++k) {
      if (k != where) EXPECT_GT(p.mass[where], p.mass[k]);
    }
  }
}

TEST(Propagate, LeavesFeatureMapUntouched) {
  std::mt19937_64 rng(16);
  const Tensor u = oracle::random_map(3, 3, 2, rng);
  const Tensor before = u.clone();
  propagate(build_weight_matrix(u));
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(u[i], before[i]);
}

TEST(Fuse, UniformPlusOneHot) {
  const AttentionProposal uniform{2, 2, {0.25, 0.25, 0.25, 0.25}, "a"};
  const AttentionProposal hot{2, 2, {0, 0, 0, 1}, "b"};
  const std::vector<AttentionProposal> list{uniform, hot};
  const AttentionProposal f = fuse_proposals(list, 2, 2);
  const std::vector<double> want{0.125, 0.125, 0.125, 0.625};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.mass[i], want[i], 1e-15);
}

TEST(Fuse, SingleAndDuplicateProposalsUnchanged) {
  const AttentionProposal p{2, 3, {0.1, 0.2, 0.3, 0.05, 0.15, 0.2}, "p"};
  const std::vector<AttentionProposal> one{p};
  const std::vector<AttentionProposal> two{p, p};
  for (const auto& list : {one, two}) {
    const AttentionProposal f = fuse_proposals(list, 2, 3);
    for (std::size_t i = 0; i < p.mass.size(); ++i) EXPECT_NEAR(f.mass[i], p.mass[i], 1e-15);
  }
}

TEST(Fuse, ResizedResultSumsToOne) {
  const AttentionProposal p{2, 2, {0.1, 0.2, 0.3, 0.4}, "p"};
  const AttentionProposal q{4, 4, std::vector<double>(16, 1.0 / 16), "q"};
  const std::vector<AttentionProposal> list{p, q};
  const AttentionProposal f = fuse_proposals(list, 8, 8);
  EXPECT_NEAR(std::accumulate(f.mass.begin(), f.mass.end(), 0.0), 1.0, 1e-12);
}

TEST(Fuse, EmptyListThrows) {
  EXPECT_THROW(fuse_proposals({}, 2, 2), EmptyInputError);
}

TEST(CropBox, UniformGivesFullImage) {
  const AttentionProposal p{4, 4, std::vector<double>(16, 1.0 / 16), "u"};
  const CropBox box = crop_box(p, 32, 32);
  EXPECT_EQ(box.side, 32);
  EXPECT_EQ(box.top(), 0);
  EXPECT_EQ(box.left(), 0);
}

TEST(CropBox, SpikeGivesMinimumSideAroundIt) {
  std::vector<double> mass(32 * 32, 0.0);
  mass[20 * 32 + 11] = 1.0;
  const CropBox box = crop_box(AttentionProposal{32, 32, mass, "s"}, 32, 32);
  EXPECT_EQ(box.side, kMinCropSide);
  EXPECT_LE(box.top(), 20);
  EXPECT_GT(box.top() + box.side, 20);
  EXPECT_LE(box.left(), 11);
  EXPECT_GT(box.left() + box.side, 11);
  EXPECT_LE(std::abs(box.center_row - 20), 1);
  EXPECT_LE(std::abs(box.center_col - 11), 1);
}

TEST(CropBox, HotBlockThreshold) {
  std::vector<double> mass(16, 0.0125);
  for (std::size_t k : {5u, 6u, 9u, 10u}) mass[k] = 0.2;
  const double mean = std::accumulate(mass.begin(), mass.end(), 0.0) / 16.0;
  const double tau = mean + 0.5 * (0.2 - mean);
  EXPECT_GT(tau, 0.0125);
  EXPECT_LT(tau, 0.2);
  // Cells are 16 pixels; the block spans rows and columns 1..2.
  const CropBox box = crop_box(AttentionProposal{4, 4, mass, "b"}, 64, 64);
  EXPECT_EQ(box.side, 32);
  EXPECT_EQ(box.top(), 16);
  EXPECT_EQ(box.left(), 16);
}

TEST(CropBox, StaysInsideImage) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> mass(64);
    for (double& v : mass) v = std::pow(u(rng), 6.0);
    const CropBox box = crop_box(AttentionProposal{8, 8, mass, "r"}, 32, 32, 1 + trial % 20);
    EXPECT_GE(box.top(), 0);
    EXPECT_GE(box.left(), 0);
    EXPECT_LE(box.top() + box.side, 32);
    EXPECT_LE(box.left() + box.side, 32);
    EXPECT_GE(box.side, 1 + trial % 20);
  }
}

TEST(CropAndZoom, FullBoxIsIdentity) {
  std::mt19937_64 rng(18);
  const Tensor img = oracle::random_map(16, 16, 2, rng);
  const Tensor out = crop_and_zoom(img, CropBox{8, 8, 16});
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 1e-12);
}

TEST(CropAndZoom, ConstantImageStaysConstant) {
  const Tensor out = crop_and_zoom(Tensor({1, 16, 16}, 0.4), CropBox{8, 8, 8});
  for (double v : out.values()) EXPECT_NEAR(v, 0.4, 1e-15);
}

TEST(CropAndZoom, RampMatchesIndependentSampler) {
  const std::size_t n = 16;
  std::vector<double> ramp(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) ramp[y * n + x] = static_cast<double>(x);
  }
  const Tensor img({1, n, n}, ramp);
  const CropBox box{8, 8, 8};
  const Tensor out = crop_and_zoom(img, box);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double sy = box.top() + (y + 0.5) * 0.5 - 0.5;
      const double sx = box.left() + (x + 0.5) * 0.5 - 0.5;
      EXPECT_NEAR(out[y * n + x], oracle::bilinear_sample(ramp, n, n, sy, sx), 1e-12);
    }
  }
  // The boxed half of the ramp is stretched over the full width: one output
  // pixel advances half a source pixel.
  for (std::size_t x = 1; x < n; ++x) EXPECT_NEAR(out[x] - out[x - 1], 0.5, 1e-12);
}

TEST(CropAndZoom, BoxOutsideImageThrows) {
  EXPECT_THROW(crop_and_zoom(Tensor({1, 8, 8}), CropBox{1, 1, 6}), ParameterError);
}

TEST(ObjectAttention, ProposalSumsToOneAndMatchesStepwise) {
  std::mt19937_64 rng(19);
  const std::vector<Tensor> maps{oracle::random_map(8, 8, 3, rng), oracle::random_map(4, 4, 3, rng)};
  const AttentionProposal p = object_attention(maps, 32, 32);
  const std::vector<AttentionProposal> parts{propagate(build_weight_matrix(maps[0])),
                                             propagate(build_weight_matrix(maps[1]))};
  const AttentionProposal q = fuse_proposals(parts, 32, 32);
  EXPECT_NEAR(std::accumulate(p.mass.begin(), p.mass.end(), 0.0), 1.0, 1e-12);
  for (std::size_t i = 0; i < p.mass.size(); ++i) EXPECT_NEAR(p.mass[i], q.mass[i], 1e-15);
}

TEST(ObjectAttention, StrideCountMismatchThrows) {
  std::mt19937_64 rng(20);
  const std::vector<Tensor> maps{oracle::random_map(4, 4, 2, rng)};
  const std::vector<std::size_t> strides{4, 8};
  EXPECT_THROW(object_attention(maps, 16, 16, 10, strides), DimensionError);
}

TEST(UpsampleAligned, CellCentresLandOnStrideMultiples) {
  const AttentionProposal p{2, 2, {0.1, 0.2, 0.3, 0.4}, "p"};
  const AttentionProposal up = upsample_aligned(p, 4, 8, 8);
  const double total = std::accumulate(up.mass.begin(), up.mass.end(), 0.0);
  EXPECT_NEAR(total, 1.0, 1e-12);
  // Pixel (4k, 4l) carries the cell value before renormalization.
  const double norm = up.at(0, 0) / 0.1;
  EXPECT_NEAR(up.at(0, 4), 0.2 * norm, 1e-12);
  EXPECT_NEAR(up.at(4, 0), 0.3 * norm, 1e-12);
  EXPECT_NEAR(up.at(4, 4), 0.4 * norm, 1e-12);
  EXPECT_THROW(upsample_aligned(p, 0, 8, 8), ParameterError);
}
