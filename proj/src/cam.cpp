#include "deml/cam.hpp"

#include <cmath>
#include <string>

#include "deml/errors.hpp"
#include "deml/ops.hpp"

namespace deml {
namespace {

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad();
  return t;
}

}  // namespace

CamParams CamParams::random(std::size_t channels, std::size_t hidden, double stddev,
                            std::mt19937_64& rng) {
  CamParams p;
  p.w1 = gaussian({hidden, channels}, stddev, rng);
  p.w2 = gaussian({channels, hidden}, stddev, rng);
  return p;
}

CamParams CamParams::zeros(std::size_t channels, std::size_t hidden) {
  CamParams p{Tensor({hidden, channels}), Tensor({channels, hidden})};
  p.w1.set_requires_grad();
  p.w2.set_requires_grad();
  return p;
}

Tensor cam_gates(const Tensor& feature_map, const CamParams& params) {
  const std::size_t c = feature_map.ndim() == 4 ? feature_map.dim(1)
                        : feature_map.ndim() == 3 ? feature_map.dim(0)
                                                  : 0;
  if (c == 0 || c != params.channels() || params.w2.dim(0) != c ||
      params.w2.dim(1) != params.w1.dim(0)) {
    throw DimensionError("cam: feature map " + shape_string(feature_map.shape()) +
                         " does not match CAM weights " + shape_string(params.w1.shape()) +
                         " / " + shape_string(params.w2.shape()));
  }
  const Tensor pooled = spatial_avg_pool(feature_map);
  return sigmoid(linear(relu(linear(pooled, params.w1)), params.w2));
}

Tensor cam_forward(const Tensor& feature_map, const CamParams& params) {
  return channel_scale(feature_map, cam_gates(feature_map, params));
}

AdversaryNet AdversaryNet::random(std::size_t input, std::size_t hidden,
                                  std::size_t output, std::mt19937_64& rng) {
  return AdversaryNet{gaussian({hidden, input}, std::sqrt(2.0 / input), rng),
                      gaussian({output, hidden}, std::sqrt(1.0 / hidden), rng)};
}

Tensor AdversaryNet::forward(const Tensor& embedding) const {
  return linear(relu(linear(embedding, w1)), w2);
}

Tensor adversary_loss(std::span<const Tensor> embeddings, const AdversaryNet& net,
                      double lambda0, bool reverse) {
  if (embeddings.size() < 2) {
    throw InsufficientBranchesError("adversary_loss: need at least 2 branches, got " +
                                    std::to_string(embeddings.size()));
  }
  for (const Tensor& e : embeddings) {
    if (e.shape() != embeddings.front().shape()) {
      throw DimensionError("adversary_loss: branch embeddings differ in shape");
    }
  }
  const std::size_t rows = embeddings.front().ndim() == 2 ? embeddings.front().dim(0) : 1;

  std::vector<Tensor> mapped;
  mapped.reserve(embeddings.size());
  for (const Tensor& e : embeddings) {
    mapped.push_back(net.forward(reverse ? grad_reverse(e) : e));
  }
  std::vector<Tensor> terms;
  for (std::size_t j = 0; j < mapped.size(); ++j) {
    for (std::size_t k = j + 1; k < mapped.size(); ++k) {
      terms.push_back(sum_squares(sub(mapped[j], mapped[k])));
    }
  }
  Tensor total = terms.front();
  for (std::size_t t = 1; t < terms.size(); ++t) total = add(total, terms[t]);
  return scale(total, lambda0 / static_cast<double>(rows));
}

}  // namespace deml
