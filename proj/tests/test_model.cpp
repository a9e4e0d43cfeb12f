#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "deml/checkpoint.hpp"
#include "deml/errors.hpp"
#include "deml/model.hpp"
#include "deml/ops.hpp"
#include "oracles.hpp"

using namespace deml;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(std::size_t scales, std::size_t branches, std::size_t d = 16) {
  ModelConfig c;
  c.scales = scales;
  c.branches = branches;
  c.embedding_dim = d;
  c.backbone.image_size = 16;
  c.backbone.fnet = {{4, 1}, {8, 2}};
  c.backbone.gnet = {{8, 1}, {12, 2}};
  return c;
}

Tensor random_images(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * size * size);
  for (double& x : v) x = u(rng);
  return Tensor({n, 1, size, size}, std::move(v));
}

void copy_into(const Tensor& dst_handle, const Tensor& src) {
  Tensor dst = dst_handle;
  for (std::size_t i = 0; i < src.size(); ++i) dst.values()[i] = src[i];
}

Tensor conv_relu(const Tensor& x, const ConvLayer& l) {
  return relu(add_channel_bias(conv2d(x, l.kernels, l.stride), l.bias));
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("deml_test_" + name);
}

}  // namespace

TEST(Model, BankShapeContract) {
  const Model model(small_config(1, 2), 1);
  std::mt19937_64 rng(1);
  const ForwardResult r = model.forward_all_scales(random_images(3, 16, rng));
  ASSERT_EQ(r.bank.learners(), 2u);
  for (const Tensor& e : r.bank.embeddings) EXPECT_EQ(e.shape(), (Shape{3, 8}));
}

TEST(Model, DimensionalContract) {
  ModelConfig c = small_config(2, 3, 50);
  EXPECT_EQ(c.learner_dim(), 8u);
  EXPECT_EQ(c.holistic_dim(), 48u);
  const Model model(c, 2);
  std::mt19937_64 rng(2);
  const ForwardResult r = model.forward_all_scales(random_images(2, 16, rng));
  EXPECT_EQ(holistic_embed(r.bank).shape(), (Shape{2, 48}));
}

TEST(Model, ValidateRejectsTinyLearners) {
  EXPECT_THROW(small_config(2, 2, 15).validate(), ParameterError);
  EXPECT_NO_THROW(small_config(2, 2, 16).validate());
  ModelConfig zero = small_config(1, 1);
  zero.branches = 0;
  EXPECT_THROW(zero.validate(), ParameterError);
}

TEST(Model, WrongInputShapeThrows) {
  const Model model(small_config(1, 1), 3);
  EXPECT_THROW(model.forward_scale(Tensor({2, 1, 8, 8}), 0), DimensionError);
}

TEST(Model, ZeroCamEqualsHalfGatedPlainPipeline) {
  const Model model(small_config(1, 1), 4);
  const CamParams& cam = model.cam(0, 0);
  copy_into(cam.w1, Tensor(cam.w1.shape()));
  copy_into(cam.w2, Tensor(cam.w2.shape()));
  std::mt19937_64 rng(4);
  const Tensor x = random_images(2, 16, rng);
  const ScaleOutput out = model.forward_scale(x, 0);

  const Backbone& net = model.backbone(0);
  Tensor h = x;
  for (const ConvLayer& l : net.fnet) h = conv_relu(h, l);
  h = scale(h, 0.5);
  for (const ConvLayer& l : net.gnet) h = conv_relu(h, l);
  const Tensor want = linear(spatial_avg_pool(h), model.learner(0, 0));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.embeddings[0][i], want[i], 1e-12);
}

TEST(Model, IdenticalBranchParametersGiveIdenticalEmbeddings) {
  const Model model(small_config(1, 2), 5);
  copy_into(model.cam(0, 1).w1, model.cam(0, 0).w1);
  copy_into(model.cam(0, 1).w2, model.cam(0, 0).w2);
  copy_into(model.learner(0, 1), model.learner(0, 0));
  std::mt19937_64 rng(5);
  const ScaleOutput out = model.forward_scale(random_images(3, 16, rng), 0);
  for (std::size_t i = 0; i < out.embeddings[0].size(); ++i) {
    EXPECT_EQ(out.embeddings[0][i], out.embeddings[1][i]);
  }
}

TEST(Model, BranchesStartDistinct) {
  const Model model(small_config(1, 2), 6);
  std::mt19937_64 rng(6);
  const ScaleOutput out = model.forward_scale(random_images(2, 16, rng), 0);
  double diff = 0.0;
  for (std::size_t i = 0; i < out.embeddings[0].size(); ++i) {
    diff += std::abs(out.embeddings[0][i] - out.embeddings[1][i]);
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Model, SingleScaleMatchesForwardScale) {
  const Model model(small_config(1, 2), 7);
  std::mt19937_64 rng(7);
  const Tensor x = random_images(2, 16, rng);
  const ForwardResult all = model.forward_all_scales(x);
  const ScaleOutput one = model.forward_scale(x, 0);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < one.embeddings[j].size(); ++i) {
      EXPECT_EQ(all.bank.at(0, j)[i], one.embeddings[j][i]);
    }
  }
}

TEST(Model, BlankImageGivesFullCrop) {
  // A blank input makes every feature map spatially constant (bias only),
  // so the proposal is uniform and the crop is the whole image.
  const Model model(small_config(2, 2), 8);
  const Tensor x({1, 1, 16, 16});
  const ForwardResult r = model.forward_all_scales(x);
  EXPECT_EQ(r.boxes[0][0].side, 16);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r.scale_inputs[1][i], x[i]);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < r.bank.at(0, j).size(); ++i) {
      EXPECT_NEAR(r.bank.at(0, j)[i], r.bank.at(1, j)[i], 1e-12);
    }
  }
}

TEST(Model, SecondScaleIsStepwiseCropOfFirst) {
  ModelConfig c = small_config(2, 2);
  c.min_crop_side = 4;
  const Model model(c, 9);
  std::vector<double> pixels(16 * 16, 0.05);
  for (std::size_t y = 2; y < 7; ++y) {
    for (std::size_t x = 10; x < 15; ++x) pixels[y * 16 + x] = 1.0;
  }
  const Tensor img({1, 1, 16, 16}, pixels);
  const ForwardResult r = model.forward_all_scales(img);

  const ScaleOutput first = model.forward_scale(img, 0);
  const std::vector<std::size_t> strides = model.attention_strides();
  const oam::AttentionProposal p =
      oam::object_attention(first.attention_maps[0], 16, 16, c.oam_steps, strides);
  const oam::CropBox box = oam::crop_box(p, 16, 16, c.min_crop_side);
  EXPECT_EQ(box, r.boxes[0][0]);
  const Tensor want = oam::crop_and_zoom(batch_item(img, 0), box);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(r.scale_inputs[1][i], want[i]);
}

TEST(Model, CropBoxReceivesNoGradient) {
  const Model model(small_config(2, 2), 10);
  std::mt19937_64 rng(10);
  Tensor x = random_images(2, 16, rng);
  x.set_requires_grad();
  const ForwardResult r = model.forward_all_scales(x);
  EXPECT_FALSE(r.scale_inputs[1].requires_grad());
}

TEST(Model, BackboneSharingFollowsConfig) {
  const Model shared(small_config(2, 2), 11);
  EXPECT_TRUE(shared.backbone(0).gnet[0].kernels.same_storage(shared.backbone(1).gnet[0].kernels));
  ModelConfig c = small_config(2, 2);
  c.share_backbone_across_scales = false;
  const Model split(c, 11);
  EXPECT_FALSE(split.backbone(0).gnet[0].kernels.same_storage(split.backbone(1).gnet[0].kernels));
  EXPECT_FALSE(split.backbone(0).fnet[0].kernels.same_storage(split.backbone(1).fnet[0].kernels));
}

TEST(Model, NamedParametersAreUniqueTensors) {
  const Model model(small_config(2, 3, 24), 12);
  const auto params = model.named_parameters();
  for (std::size_t a = 0; a < params.size(); ++a) {
    for (std::size_t b = a + 1; b < params.size(); ++b) {
      EXPECT_NE(params[a].name, params[b].name);
      EXPECT_FALSE(params[a].tensor.same_storage(params[b].tensor));
    }
  }
}

TEST(Model, ConstructionIsDeterministic) {
  const Model a(small_config(2, 2), 13), b(small_config(2, 2), 13);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    for (std::size_t i = 0; i < pa[k].tensor.size(); ++i) {
      EXPECT_EQ(pa[k].tensor[i], pb[k].tensor[i]);
    }
  }
}

TEST(Holistic, SingleLearnerIsNormalizedEmbedding) {
  const Tensor e = Tensor::matrix({{3, 4}, {0, 2}});
  LearnerBank bank{1, 1, {e}};
  const Tensor h = holistic_embed(bank);
  const std::vector<double> want{0.6, 0.8, 0.0, 1.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(h[i], want[i], 1e-15);
}

TEST(Holistic, OrthogonalUnitPairHasNormRootTwo) {
  LearnerBank bank{1, 2, {Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})}};
  const Tensor h = holistic_embed(bank);
  double sq = 0.0;
  for (double v : h.values()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq), std::sqrt(2.0), 1e-15);
}

TEST(Holistic, CosineIsMeanOfPerLearnerCosines) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    LearnerBank bank{2, 2, {}};
    for (int l = 0; l < 4; ++l) {
      std::vector<double> v(2 * 5);
      for (double& x : v) x = g(rng);
      bank.embeddings.push_back(Tensor({2, 5}, v));
    }
    const Tensor h = holistic_embed(bank);
    const std::size_t len = h.dim(1);
    double dot = 0, n0 = 0, n1 = 0;
    for (std::size_t k = 0; k < len; ++k) {
      dot += h[k] * h[len + k];
      n0 += h[k] * h[k];
      n1 += h[len + k] * h[len + k];
    }
    double mean_cos = 0.0;
    for (const Tensor& e : bank.embeddings) {
      double d = 0, a = 0, b = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        d += e[k] * e[5 + k];
        a += e[k] * e[k];
        b += e[5 + k] * e[5 + k];
      }
      mean_cos += d / std::sqrt(a * b) / 4.0;
    }
    EXPECT_NEAR(dot / std::sqrt(n0 * n1), mean_cos, 1e-12);
  }
}

TEST(Holistic, ZeroEmbeddingThrows) {
  LearnerBank bank{1, 1, {Tensor({1, 3})}};
  EXPECT_THROW(holistic_embed(bank), DegenerateVectorError);
}

TEST(Checkpoint, RoundTripPreservesParametersAndOutputs) {
  ModelConfig c = small_config(2, 2);
  c.branch_init_spread = 0.37;
  c.min_crop_side = 6;
  const Model model(c, 15);
  const fs::path path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path);
  const Model loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config(), model.config());
  const auto pa = model.named_parameters(), pb = loaded.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    EXPECT_EQ(pa[k].name, pb[k].name);
    for (std::size_t i = 0; i < pa[k].tensor.size(); ++i) EXPECT_EQ(pa[k].tensor[i], pb[k].tensor[i]);
  }
  std::mt19937_64 rng(15);
  const Tensor x = random_images(2, 16, rng);
  const Tensor ha = holistic_embed(model.forward_all_scales(x).bank);
  const Tensor hb = holistic_embed(loaded.forward_all_scales(x).bank);
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i], hb[i]);
  fs::remove(path);
}

TEST(Checkpoint, MalformedFilesThrow) {
  const fs::path bad = temp_path("bad.ckpt");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE1";
  }
  EXPECT_THROW(load_checkpoint(bad), FormatError);

  const Model model(small_config(1, 1), 16);
  const fs::path good = temp_path("trunc.ckpt");
  save_checkpoint(model, good);
  fs::resize_file(good, fs::file_size(good) - 9);
  EXPECT_THROW(load_checkpoint(good), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), FormatError);
  fs::remove(bad);
  fs::remove(good);
}
