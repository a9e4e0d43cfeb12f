#include "deml/oam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deml/errors.hpp"

namespace deml::oam {
namespace {

void normalize_mass(std::vector<double>& mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(mass.begin(), mass.end(), 1.0 / static_cast<double>(mass.size()));
    return;
  }
  for (double& v : mass) v /= total;
}

// Sample of `plane` at fractional coordinates, clamped to the border.
double sample_bilinear(std::span<const double> plane, std::size_t h, std::size_t w,
                       double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
  const double bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

}  // namespace

WeightMatrix build_weight_matrix(const Tensor& feature_map, std::string layer_id) {
  if (feature_map.ndim() != 3) {
    throw DimensionError("build_weight_matrix: expected [C x H x W], got " +
                         shape_string(feature_map.shape()));
  }
  const std::size_t c = feature_map.dim(0);
  const std::size_t h = feature_map.dim(1);
  const std::size_t w = feature_map.dim(2);
  const std::size_t n = h * w;
  if (n < 2) {
    throw DimensionError("build_weight_matrix: need at least two locations");
  }
  auto fv = feature_map.values();

  WeightMatrix d{h, w, std::vector<double>(n * n, 0.0), std::move(layer_id)};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double diff = fv[ch * n + a] - fv[ch * n + b];
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      d.weights[a * n + b] = dist;
      d.weights[b * n + a] = dist;
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    double* r = d.weights.data() + a * n;
    const double total = std::accumulate(r, r + n, 0.0);
    if (total < 1e-12) {
      std::fill(r, r + n, 1.0 / static_cast<double>(n));
    } else {
      for (std::size_t b = 0; b < n; ++b) r[b] /= total;
    }
  }
  return d;
}

AttentionProposal propagate(const WeightMatrix& d, int steps) {
  if (steps < 1) throw ParameterError("propagate: steps must be >= 1");
  const std::size_t n = d.nodes();
  std::vector<double> mass(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n);
  for (int t = 0; t < steps; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      const double ma = mass[a];
      const double* r = d.weights.data() + a * n;
      for (std::size_t b = 0; b < n; ++b) next[b] += r[b] * ma;
    }
    mass.swap(next);
  }
  return AttentionProposal{d.height, d.width, std::move(mass), d.layer_id};
}

std::vector<double> bilinear_resize(std::span<const double> plane, std::size_t in_h,
                                    std::size_t in_w, std::size_t out_h,
                                    std::size_t out_w) {
  std::vector<double> out(out_h * out_w);
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      out[y * out_w + x] = sample_bilinear(plane, in_h, in_w, src_y, src_x);
    }
  }
  return out;
}

AttentionProposal fuse_proposals(std::span<const AttentionProposal> proposals,
                                 std::size_t out_h, std::size_t out_w) {
  if (proposals.empty()) throw EmptyInputError("fuse_proposals: no proposals");
  std::vector<double> mean(out_h * out_w, 0.0);
  for (const AttentionProposal& p : proposals) {
    const auto resized = (p.height == out_h && p.width == out_w)
                             ? p.mass
                             : bilinear_resize(p.mass, p.height, p.width, out_h, out_w);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += resized[i];
  }
  for (double& v : mean) v /= static_cast<double>(proposals.size());
  normalize_mass(mean);
  return AttentionProposal{out_h, out_w, std::move(mean), "fused"};
}

CropBox crop_box(const AttentionProposal& m, int image_h, int image_w, int min_side) {
  const auto [lo, hi] = std::minmax_element(m.mass.begin(), m.mass.end());
  const double mean =
      std::accumulate(m.mass.begin(), m.mass.end(), 0.0) / static_cast<double>(m.mass.size());
  const int full_side = std::min(image_h, image_w);
  if (*hi - *lo <= 0.0) {
    return CropBox{image_h / 2, image_w / 2, full_side};
  }
  const double tau = mean + 0.5 * (*hi - mean);

  std::size_t r0 = m.height, r1 = 0, c0 = m.width, c1 = 0;
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) {
      if (m.at(r, c) >= tau) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }

  // Cell edges in pixels; the box spans [top, bottom) x [left, right).
  const double cell_h = static_cast<double>(image_h) / static_cast<double>(m.height);
  const double cell_w = static_cast<double>(image_w) / static_cast<double>(m.width);
  const int top = static_cast<int>(std::floor(static_cast<double>(r0) * cell_h));
  const int bottom = static_cast<int>(std::ceil(static_cast<double>(r1 + 1) * cell_h));
  const int left = static_cast<int>(std::floor(static_cast<double>(c0) * cell_w));
  const int right = static_cast<int>(std::ceil(static_cast<double>(c1 + 1) * cell_w));

  int side = std::max(bottom - top, right - left);
  side = std::clamp(side, std::min(std::max(min_side, 1), full_side), full_side);

  // Centre the square on the box, then shift it back inside the image.
  int box_top = (top + bottom) / 2 - side / 2;
  int box_left = (left + right) / 2 - side / 2;
  box_top = std::clamp(box_top, 0, image_h - side);
  box_left = std::clamp(box_left, 0, image_w - side);
  return CropBox{box_top + side / 2, box_left + side / 2, side};
}

Tensor crop_and_zoom(const Tensor& image, const CropBox& box) {
  if (image.ndim() != 3) {
    throw DimensionError("crop_and_zoom: expected [C x H x W], got " +
                         shape_string(image.shape()));
  }
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (box.side <= 0 || box.top() < 0 || box.left() < 0 ||
      box.top() + box.side > static_cast<int>(h) ||
      box.left() + box.side > static_cast<int>(w)) {
    throw ParameterError("crop_and_zoom: box outside the image");
  }
  const double sy = static_cast<double>(box.side) / static_cast<double>(h);
  const double sx = static_cast<double>(box.side) / static_cast<double>(w);
  std::vector<double> out(image.size());
  auto iv = image.values();
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = iv.subspan(c * h * w, h * w);
    for (std::size_t y = 0; y < h; ++y) {
      const double src_y = box.top() + (static_cast<double>(y) + 0.5) * sy - 0.5;
      for (std::size_t x = 0; x < w; ++x) {
        const double src_x = box.left() + (static_cast<double>(x) + 0.5) * sx - 0.5;
        out[(c * h + y) * w + x] = sample_bilinear(plane, h, w, src_y, src_x);
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

AttentionProposal upsample_aligned(const AttentionProposal& p, std::size_t stride,
                                   std::size_t out_h, std::size_t out_w) {
  if (stride == 0) throw ParameterError("upsample_aligned: stride must be positive");
  std::vector<double> out(out_h * out_w);
  const double s = static_cast<double>(stride);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      out[y * out_w + x] = sample_bilinear(p.mass, p.height, p.width,
                                           static_cast<double>(y) / s,
                                           static_cast<double>(x) / s);
    }
  }
  normalize_mass(out);
  return AttentionProposal{out_h, out_w, std::move(out), p.source};
}

AttentionProposal object_attention(std::span<const Tensor> feature_maps,
                                   std::size_t image_h, std::size_t image_w, int steps,
                                   std::span<const std::size_t> strides) {
  if (!strides.empty() && strides.size() != feature_maps.size()) {
    throw DimensionError("object_attention: " + std::to_string(strides.size()) +
                         " strides for " + std::to_string(feature_maps.size()) + " maps");
  }
  std::vector<AttentionProposal> proposals;
  proposals.reserve(feature_maps.size());
  for (std::size_t k = 0; k < feature_maps.size(); ++k) {
    AttentionProposal p = propagate(
        build_weight_matrix(feature_maps[k], "layer" + std::to_string(k)), steps);
    if (!strides.empty()) p = upsample_aligned(p, strides[k], image_h, image_w);
    proposals.push_back(std::move(p));
  }
  return fuse_proposals(proposals, image_h, image_w);
}

}  // namespace deml::oam
