#include "deml/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "deml/errors.hpp"
#include "deml/ops.hpp"

namespace deml {
namespace {

Tensor gaussian_param(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad();
  return t;
}

std::vector<ConvLayer> make_stages(const std::vector<ConvStage>& stages,
                                   std::size_t in_channels, std::mt19937_64& rng) {
  std::vector<ConvLayer> layers;
  for (const ConvStage& s : stages) {
    ConvLayer layer;
    layer.kernels = gaussian_param({s.channels, in_channels, 3, 3},
                                   std::sqrt(2.0 / (9.0 * in_channels)), rng);
    layer.bias = Tensor({s.channels});
    layer.bias.set_requires_grad();
    layer.stride = s.stride;
    layers.push_back(std::move(layer));
    in_channels = s.channels;
  }
  return layers;
}

Tensor conv_block(const Tensor& x, const ConvLayer& layer) {
  return relu(add_channel_bias(conv2d(x, layer.kernels, layer.stride), layer.bias));
}

std::string idx(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

}  // namespace

std::size_t BackboneConfig::fnet_channels() const {
  return fnet.empty() ? input_channels : fnet.back().channels;
}

std::size_t BackboneConfig::gnet_channels() const {
  return gnet.empty() ? fnet_channels() : gnet.back().channels;
}

std::size_t ModelConfig::learner_dim() const {
  if (scales == 0 || branches == 0) return 0;
  return embedding_dim / (scales * branches);
}

void ModelConfig::validate() const {
  if (scales < 1) throw ParameterError("model: I must be >= 1");
  if (branches < 1) throw ParameterError("model: J must be >= 1");
  if (learner_dim() < 4) {
    throw ParameterError("model: floor(d / (I*J)) = " + std::to_string(learner_dim()) +
                         " is below 4");
  }
  if (oam_steps < 1) throw ParameterError("model: oam_steps must be >= 1");
  if (min_crop_side < 1 || min_crop_side > static_cast<int>(backbone.image_size)) {
    throw ParameterError("model: min_crop_side must lie in [1, image_size]");
  }
  if (!(branch_init_spread >= 0.0) || !std::isfinite(branch_init_spread)) {
    throw ParameterError("model: branch_init_spread must be finite and >= 0");
  }
  if (backbone.gnet.size() < 2) {
    throw ParameterError("model: GNet needs at least two stages to feed the OAM");
  }
  if (backbone.image_size < 8) throw ParameterError("model: image_size must be >= 8");
  for (const auto* stages : {&backbone.fnet, &backbone.gnet}) {
    for (const ConvStage& s : *stages) {
      if (s.channels == 0 || (s.stride != 1 && s.stride != 2)) {
        throw ParameterError("model: conv stages need channels > 0 and stride 1 or 2");
      }
    }
  }
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const BackboneConfig& bb = config_.backbone;
  const std::size_t n_backbones = config_.share_backbone_across_scales ? 1 : config_.scales;
  for (std::size_t b = 0; b < n_backbones; ++b) {
    Backbone net;
    net.fnet = make_stages(bb.fnet, bb.input_channels, rng);
    net.gnet = make_stages(bb.gnet, bb.fnet_channels(), rng);
    backbones_.push_back(std::move(net));
  }
  const std::size_t c_f = bb.fnet_channels();
  const std::size_t c_g = bb.gnet_channels();
  const std::size_t v = config_.learner_dim();
  const double spread = config_.branch_init_spread;
  const double shrink = 1.0 / std::sqrt(1.0 + spread * spread);
  // shared + spread * own, rescaled to keep the variance of an independent draw
  auto branch_copy = [&](const Tensor& shared, double stddev) {
    Tensor t = gaussian_param(shared.shape(), stddev, rng);
    auto vals = t.values();
    const auto base = shared.values();
    for (std::size_t n = 0; n < vals.size(); ++n) vals[n] = shrink * (base[n] + spread * vals[n]);
    return t;
  };
  for (std::size_t i = 0; i < config_.scales; ++i) {
    const double sf = 1.0 / std::sqrt(c_f);
    const double sg = 1.0 / std::sqrt(c_g);
    CamParams cam_base;
    if (config_.use_cam) cam_base = CamParams::random(c_f, kCamHidden, sf, rng);
    const Tensor learner_base = gaussian_param({v, c_g}, sg, rng);
    for (std::size_t j = 0; j < config_.branches; ++j) {
      if (config_.use_cam) {
        cams_.push_back(CamParams{branch_copy(cam_base.w1, sf), branch_copy(cam_base.w2, sf)});
      }
      learners_.push_back(branch_copy(learner_base, sg));
    }
    if (config_.branches >= 2) {
      adversaries_.push_back(AdversaryNet::random(v, kAdversaryWidth, kAdversaryWidth, rng));
    }
  }
}

std::vector<std::size_t> Model::attention_strides() const {
  const BackboneConfig& bb = config_.backbone;
  std::vector<std::size_t> cumulative;
  std::size_t stride = 1;
  for (const ConvStage& st : bb.fnet) stride *= st.stride;
  for (const ConvStage& st : bb.gnet) {
    stride *= st.stride;
    cumulative.push_back(stride);
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < config_.branches; ++j) {
    out.insert(out.end(), cumulative.end() - 2, cumulative.end());
  }
  return out;
}

const Backbone& Model::backbone(std::size_t scale) const {
  return backbones_.at(config_.share_backbone_across_scales ? 0 : scale);
}

const CamParams& Model::cam(std::size_t scale, std::size_t branch) const {
  if (!config_.use_cam) throw ParameterError("model has no CAMs");
  return cams_.at(scale * config_.branches + branch);
}

const Tensor& Model::learner(std::size_t scale, std::size_t branch) const {
  return learners_.at(scale * config_.branches + branch);
}

const AdversaryNet& Model::adversary(std::size_t scale) const {
  if (adversaries_.empty()) throw InsufficientBranchesError("model has a single branch");
  return adversaries_.at(scale);
}

std::vector<Tensor> Model::learner_weights() const { return learners_; }

ScaleOutput Model::forward_scale(const Tensor& images, std::size_t scale) const {
  const BackboneConfig& bb = config_.backbone;
  if (scale >= config_.scales) {
    throw ParameterError("forward_scale: scale " + std::to_string(scale) + " of " +
                         std::to_string(config_.scales));
  }
  if (images.ndim() != 4 || images.dim(1) != bb.input_channels ||
      images.dim(2) != bb.image_size || images.dim(3) != bb.image_size) {
    throw DimensionError("forward_scale: expected [N x " + std::to_string(bb.input_channels) +
                         " x " + std::to_string(bb.image_size) + " x " +
                         std::to_string(bb.image_size) + "], got " +
                         shape_string(images.shape()));
  }
  const Backbone& net = backbone(scale);
  const std::size_t batch = images.dim(0);

  Tensor f = images;
  for (const ConvLayer& layer : net.fnet) f = conv_block(f, layer);

  ScaleOutput out;
  out.attention_maps.resize(batch);
  for (std::size_t j = 0; j < config_.branches; ++j) {
    Tensor h = f;
    if (config_.use_cam) {
      const CamParams& c = cam(scale, j);
      Tensor gates = cam_gates(f, c);
      h = channel_scale(f, gates);
      out.gates.push_back(gates);
    }
    const std::size_t stages = net.gnet.size();
    for (std::size_t s = 0; s < stages; ++s) {
      h = conv_block(h, net.gnet[s]);
      if (s + 2 >= stages) {
        for (std::size_t n = 0; n < batch; ++n) {
          out.attention_maps[n].push_back(batch_item(h, n));
        }
      }
    }
    out.pooled.push_back(spatial_avg_pool(h));
    out.embeddings.push_back(linear(out.pooled.back(), learner(scale, j)));
  }
  return out;
}

ForwardResult Model::forward_all_scales(const Tensor& images) const {
  ForwardResult result;
  result.bank.scales = config_.scales;
  result.bank.branches = config_.branches;
  const std::size_t size = config_.backbone.image_size;

  Tensor x = images.detach();
  const std::vector<std::size_t> strides = attention_strides();
  for (std::size_t i = 0; i < config_.scales; ++i) {
    result.scale_inputs.push_back(x);
    ScaleOutput out = forward_scale(x, i);
    for (Tensor& e : out.embeddings) result.bank.embeddings.push_back(std::move(e));
    for (Tensor& p : out.pooled) result.pooled.push_back(std::move(p));
    result.gates.push_back(std::move(out.gates));
    if (i + 1 == config_.scales) break;

    // Crop boxes come from detached feature maps: no gradient reaches them.
    std::vector<oam::AttentionProposal> proposals;
    std::vector<oam::CropBox> boxes;
    std::vector<Tensor> next;
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      proposals.push_back(
          oam::object_attention(out.attention_maps[n], size, size, config_.oam_steps, strides));
      boxes.push_back(oam::crop_box(proposals.back(), static_cast<int>(size),
                                    static_cast<int>(size), config_.min_crop_side));
      next.push_back(oam::crop_and_zoom(batch_item(x, n), boxes.back()));
    }
    result.proposals.push_back(std::move(proposals));
    result.boxes.push_back(std::move(boxes));
    x = stack_batch(next);
  }
  return result;
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> params;
  for (std::size_t b = 0; b < backbones_.size(); ++b) {
    const std::string prefix =
        config_.share_backbone_across_scales ? std::string("shared") : idx("scale", b);
    for (std::size_t k = 0; k < backbones_[b].fnet.size(); ++k) {
      params.push_back({prefix + idx(".fnet", k) + ".kernels", backbones_[b].fnet[k].kernels});
      params.push_back({prefix + idx(".fnet", k) + ".bias", backbones_[b].fnet[k].bias});
    }
    for (std::size_t k = 0; k < backbones_[b].gnet.size(); ++k) {
      params.push_back({prefix + idx(".gnet", k) + ".kernels", backbones_[b].gnet[k].kernels});
      params.push_back({prefix + idx(".gnet", k) + ".bias", backbones_[b].gnet[k].bias});
    }
  }
  for (std::size_t i = 0; i < config_.scales; ++i) {
    for (std::size_t j = 0; j < config_.branches; ++j) {
      const std::string prefix = idx("scale", i) + idx(".branch", j);
      if (config_.use_cam) {
        params.push_back({prefix + ".cam.w1", cam(i, j).w1});
        params.push_back({prefix + ".cam.w2", cam(i, j).w2});
      }
      params.push_back({prefix + ".learner", learner(i, j)});
    }
    if (!adversaries_.empty()) {
      params.push_back({idx("scale", i) + ".adversary.w1", adversaries_[i].w1});
      params.push_back({idx("scale", i) + ".adversary.w2", adversaries_[i].w2});
    }
  }
  return params;
}

std::vector<ParamGroup> Model::param_groups(double learner_lr_multiplier,
                                            bool include_adversary,
                                            double adversary_lr_multiplier) const {
  ParamGroup weights{"backbone", {}, 1.0, true};
  ParamGroup biases{"backbone_bias", {}, 1.0, false};
  ParamGroup attention{"cam", {}, 1.0, true};
  ParamGroup learners{"learners", learners_, learner_lr_multiplier, true};
  ParamGroup adversary{"adversary", {}, adversary_lr_multiplier, true};
  for (const Backbone& b : backbones_) {
    for (const auto* layers : {&b.fnet, &b.gnet}) {
      for (const ConvLayer& l : *layers) {
        weights.tensors.push_back(l.kernels);
        biases.tensors.push_back(l.bias);
      }
    }
  }
  for (const CamParams& c : cams_) {
    attention.tensors.push_back(c.w1);
    attention.tensors.push_back(c.w2);
  }
  for (const AdversaryNet& a : adversaries_) {
    adversary.tensors.push_back(a.w1);
    adversary.tensors.push_back(a.w2);
  }
  std::vector<ParamGroup> groups{weights, biases};
  if (!attention.tensors.empty()) groups.push_back(attention);
  groups.push_back(learners);
  if (include_adversary && !adversary.tensors.empty()) groups.push_back(adversary);
  return groups;
}

Tensor batch_item(const Tensor& batch, std::size_t n) {
  if (batch.ndim() < 2 || n >= batch.dim(0)) {
    throw DimensionError("batch_item: index " + std::to_string(n) + " invalid for " +
                         shape_string(batch.shape()));
  }
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t stride = numel(shape);
  auto v = batch.values();
  return Tensor(std::move(shape),
                std::vector<double>(v.begin() + n * stride, v.begin() + (n + 1) * stride));
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw EmptyInputError("stack_batch: no items");
  Shape shape = items.front().shape();
  std::vector<double> v;
  v.reserve(items.size() * items.front().size());
  for (const Tensor& t : items) {
    if (t.shape() != shape) throw DimensionError("stack_batch: items differ in shape");
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(v));
}

namespace {

Tensor normalized_concat(const LearnerBank& bank, std::size_t first, std::size_t count) {
  const std::size_t n = bank.batch_size();
  const std::size_t v = bank.learner_dim();
  std::vector<double> out;
  out.reserve(n * count * v);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = first; k < first + count; ++k) {
      const Tensor normalized = l2_normalize(row(bank.embeddings[k].detach(), s));
      out.insert(out.end(), normalized.values().begin(), normalized.values().end());
    }
  }
  return Tensor({n, count * v}, std::move(out));
}

}  // namespace

Tensor holistic_embed(const LearnerBank& bank) {
  if (bank.learners() == 0) throw EmptyInputError("holistic_embed: empty bank");
  return normalized_concat(bank, 0, bank.learners());
}

Tensor root_embed(const LearnerBank& bank, std::size_t scale) {
  if (scale >= bank.scales) {
    throw ParameterError("root_embed: scale " + std::to_string(scale) + " out of range");
  }
  return normalized_concat(bank, scale * bank.branches, bank.branches);
}

}  // namespace deml
