#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deml/tensor.hpp"

// Synthetic attribute-glyph images for zero-shot retrieval experiments.
//
// A class is a tuple of `slots` attribute values, each in [0, values). Every
// (slot, value) pair owns a distinct binary glyph, stamped at the slot's
// place inside an object block that sits somewhere in a noisy image.
namespace deml::data {

struct GlyphSpec {
  int slots = 4;         // A
  int values = 3;        // V
  int glyph_size = 6;
  int image_size = 32;
  double noise = 0.3;    // amplitude of additive uniform background noise
  // Random offsets in pixels, per glyph and for the whole glyph block. Both
  // default to 0: every slot has a fixed place in the image.
  int jitter = 0;
  int object_jitter = 0;
  // Glyph intensity per slot; missing entries default to 1.
  std::vector<double> slot_contrast;
  std::uint64_t pattern_seed = 7;

  int classes() const;
  double contrast(int slot) const;
  // Throws ParameterError on an unusable spec.
  void validate() const;
};

using ClassTuple = std::vector<int>;

ClassTuple class_tuple(const GlyphSpec& spec, int class_id);
int class_id(const GlyphSpec& spec, std::span<const int> tuple);

// glyph_size x glyph_size binary pattern of (slot, value); pairwise distinct.
std::vector<std::uint8_t> glyph_pattern(const GlyphSpec& spec, int slot, int value);

struct ZeroShotSplit {
  std::vector<int> seen;
  std::vector<int> unseen;
};

struct Dataset {
  std::vector<Tensor> images;  // each [1 x H x W], values in [0, 1]
  std::vector<int> labels;
  ZeroShotSplit split;

  std::size_t size() const { return images.size(); }
  // Indices of the images whose class is in `classes`.
  std::vector<std::size_t> indices_of(std::span<const int> classes) const;
};

// Seen classes are (a, pi(a)) for every tuple a over the first
// `sufficient_slots` slots, pi a fixed map onto the remaining slots, so the
// first slots alone separate them. Unseen classes pick `unseen_groups` tuples
// a and attach `unseen_per_group` other completions each: they collide on
// the first slots and differ only in the rest.
ZeroShotSplit make_zero_shot_split(const GlyphSpec& spec, int sufficient_slots,
                                   int unseen_groups, int unseen_per_group,
                                   std::uint64_t seed);

struct SplitReport {
  bool disjoint = false;
  // Bitmask of a proper slot subset separating all seen classes while every
  // unseen class shares its projection with another unseen class; 0 if none.
  unsigned separating_subset = 0;
  std::vector<unsigned> seen_separating_subsets;  // every proper separating mask
  bool holds() const { return disjoint && separating_subset != 0; }
};

// Exhaustive check over all proper slot subsets. Throws SplitDesignError
// naming the violated property.
SplitReport verify_split(const ZeroShotSplit& split, const GlyphSpec& spec);

// Renders one image of `class_id`; deterministic in (seed, stream).
Tensor render_image(const GlyphSpec& spec, int class_id, std::uint64_t seed,
                    std::uint64_t stream);

// per_class images of each class in `classes` (all classes when empty).
Dataset generate_dataset(const GlyphSpec& spec, int per_class, std::uint64_t seed,
                         std::span<const int> classes = {});

// Directory layout: images/NNNNNN.pgm, labels.csv (filename,class_id),
// split.csv (class_id,seen|unseen).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace deml::data
