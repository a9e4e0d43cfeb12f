#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "deml/tensor.hpp"

// Object-attention: a parameter-free random walk over feature-map locations
// whose edge weights are feature dissimilarities. Mass accumulates where a
// location differs from its surroundings.
namespace deml::oam {

// Row-stochastic transition matrix over the H*W locations of one feature map.
struct WeightMatrix {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> weights;  // (H*W) x (H*W), row-major
  std::string layer_id;

  std::size_t nodes() const { return height * width; }
  double at(std::size_t from, std::size_t to) const { return weights[from * nodes() + to]; }
};

// Nonnegative H x W map summing to one.
struct AttentionProposal {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> mass;
  std::string source;

  double at(std::size_t r, std::size_t c) const { return mass[r * width + c]; }
};

// Square crop in input-image pixels.
struct CropBox {
  int center_row = 0;
  int center_col = 0;
  int side = 0;

  int top() const { return center_row - side / 2; }
  int left() const { return center_col - side / 2; }
  bool operator==(const CropBox&) const = default;
};

inline constexpr int kMinCropSide = 8;
inline constexpr int kDefaultSteps = 10;

// Euclidean distances between the C-dim vectors at every pair of locations of
// a [C x H x W] map, each row divided by its sum. Rows summing below 1e-12
// become uniform.
WeightMatrix build_weight_matrix(const Tensor& feature_map, std::string layer_id = {});

// Starts from the uniform distribution and applies M <- D^T M `steps` times.
AttentionProposal propagate(const WeightMatrix& d, int steps = kDefaultSteps);

// Bilinearly resizes every proposal to out_h x out_w, averages, renormalizes.
AttentionProposal fuse_proposals(std::span<const AttentionProposal> proposals,
                                 std::size_t out_h, std::size_t out_w);

// Square box around the cells at or above mean + 0.5 * (max - mean). The
// proposal may be coarser than the image; cells are scaled to pixels.
CropBox crop_box(const AttentionProposal& m, int image_h, int image_w,
                 int min_side = kMinCropSide);

// Resamples the boxed region of a [C x H x W] image back to H x W.
Tensor crop_and_zoom(const Tensor& image, const CropBox& box);

// Resizes to out_h x out_w treating cell k as centered on pixel k * stride,
// where a padded stride-s convolution chain puts it.
AttentionProposal upsample_aligned(const AttentionProposal& p, std::size_t stride,
                                   std::size_t out_h, std::size_t out_w);

// Proposal for one image from its feature maps (each [C x h x w]). With
// `strides` (one per map, pixels per cell) the maps are aligned to the image
// before fusing; otherwise they are plainly resized.
AttentionProposal object_attention(std::span<const Tensor> feature_maps,
                                   std::size_t image_h, std::size_t image_w,
                                   int steps = kDefaultSteps,
                                   std::span<const std::size_t> strides = {});

// Half-pixel-centred bilinear resampling of an in_h x in_w plane.
std::vector<double> bilinear_resize(std::span<const double> plane, std::size_t in_h,
                                    std::size_t in_w, std::size_t out_h,
                                    std::size_t out_w);

}  // namespace deml::oam
