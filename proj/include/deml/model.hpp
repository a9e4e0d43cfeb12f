#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deml/adam.hpp"
#include "deml/cam.hpp"
#include "deml/learner_bank.hpp"
#include "deml/oam.hpp"
#include "deml/tensor.hpp"

namespace deml {

struct ConvStage {
  std::size_t channels = 0;  // output channels
  std::size_t stride = 1;
  bool operator==(const ConvStage&) const = default;
};

// Toy backbone split into FNet (before the CAMs) and GNet (after them).
// Every stage is a 3x3 convolution, a bias and a ReLU.
struct BackboneConfig {
  std::size_t input_channels = 1;
  std::size_t image_size = 32;
  std::vector<ConvStage> fnet{{8, 1}, {16, 2}, {32, 2}};
  std::vector<ConvStage> gnet{{32, 1}, {48, 2}};
  bool operator==(const BackboneConfig&) const = default;

  std::size_t fnet_channels() const;
  std::size_t gnet_channels() const;
};

struct ModelConfig {
  std::size_t scales = 1;           // I, object-attention root learners
  std::size_t branches = 1;         // J, channel-attention sub-learners per scale
  std::size_t embedding_dim = 512;  // d, holistic embedding size
  bool share_backbone_across_scales = true;
  // Without CAMs a single-branch model is the unified-metric baseline.
  bool use_cam = true;
  int oam_steps = oam::kDefaultSteps;
  int min_crop_side = oam::kMinCropSide;
  // Branches of one scale start from a shared draw plus independent noise of
  // this relative size (CAM weights and learner matrices). Large values give
  // independent branches.
  double branch_init_spread = 0.1;
  BackboneConfig backbone;
  bool operator==(const ModelConfig&) const = default;

  // floor(d / (I * J))
  std::size_t learner_dim() const;
  std::size_t holistic_dim() const { return learner_dim() * scales * branches; }
  // Throws ParameterError on an inconsistent configuration.
  void validate() const;
};

struct ConvLayer {
  Tensor kernels;  // [C_out x C_in x 3 x 3]
  Tensor bias;     // [C_out]
  std::size_t stride = 1;
};

struct Backbone {
  std::vector<ConvLayer> fnet;
  std::vector<ConvLayer> gnet;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Output of one scale for a batch [N x C x H x W].
struct ScaleOutput {
  std::vector<Tensor> embeddings;  // J entries of [N x learner_dim]
  std::vector<Tensor> pooled;      // J entries of [N x C_gnet], the learner inputs
  std::vector<Tensor> gates;       // J entries of [N x C_fnet]; empty without CAMs
  // Per sample: detached [C x h x w] maps of the last two GNet stages for every
  // branch, the inputs of the object-attention module.
  std::vector<std::vector<Tensor>> attention_maps;
};

struct ForwardResult {
  LearnerBank bank;
  std::vector<Tensor> scale_inputs;                       // I entries of [N x C x H x W]
  std::vector<std::vector<oam::AttentionProposal>> proposals;  // (I-1) x N
  std::vector<std::vector<oam::CropBox>> boxes;                // (I-1) x N
  std::vector<std::vector<Tensor>> gates;                      // I x J of [N x C]
  std::vector<Tensor> pooled;                                  // I*J of [N x C_gnet]
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  // Pixels per cell of each map in ScaleOutput::attention_maps[n].
  std::vector<std::size_t> attention_strides() const;

  ScaleOutput forward_scale(const Tensor& images, std::size_t scale) const;
  ForwardResult forward_all_scales(const Tensor& images) const;

  const Backbone& backbone(std::size_t scale) const;
  const CamParams& cam(std::size_t scale, std::size_t branch) const;
  const Tensor& learner(std::size_t scale, std::size_t branch) const;
  const AdversaryNet& adversary(std::size_t scale) const;

  std::vector<Tensor> learner_weights() const;

  // Every trainable tensor once, in a fixed order, under a stable name.
  std::vector<NamedTensor> named_parameters() const;

  // Optimizer groups: backbone weights, biases, CAMs, learners (with the
  // learner multiplier) and optionally the adversaries.
  std::vector<ParamGroup> param_groups(double learner_lr_multiplier,
                                       bool include_adversary,
                                       double adversary_lr_multiplier = 1.0) const;

 private:
  ModelConfig config_;
  std::vector<Backbone> backbones_;          // 1 when shared, else I
  std::vector<CamParams> cams_;              // I * J when use_cam
  std::vector<Tensor> learners_;             // I * J of [learner_dim x C_gnet]
  std::vector<AdversaryNet> adversaries_;    // I when J >= 2
};

// Row n of a batch [N x ...] as a standalone tensor with the leading axis
// dropped, and the inverse.
Tensor batch_item(const Tensor& batch, std::size_t n);
Tensor stack_batch(const std::vector<Tensor>& items);

// Per-learner L2-normalized embeddings concatenated scale-major, one row
// per sample: [N x I*J*learner_dim].
Tensor holistic_embed(const LearnerBank& bank);
// Same restricted to the J learners of one scale.
Tensor root_embed(const LearnerBank& bank, std::size_t scale);

}  // namespace deml
