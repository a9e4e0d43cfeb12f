#pragma once

#include <filesystem>

#include "deml/model.hpp"

// Flat binary checkpoint, all integers and reals little-endian:
//
//   "DEML1"
//   u32 n, then n x i64 config integers
//   u32 p, then p x { u32 name_len, name bytes, u32 ndim, ndim x u64 dims,
//                     prod(dims) x f64 values }
//
// Config integers, in order: I, J, d, share_backbone, use_cam, oam_steps,
// min_crop_side, bit pattern of branch_init_spread, input_channels,
// image_size, |fnet|, (channels, stride) per FNet stage, |gnet|,
// (channels, stride) per GNet stage.
namespace deml {

void save_checkpoint(const Model& model, const std::filesystem::path& path);

// Rebuilds the model from the stored config and overwrites every parameter.
// Throws FormatError on a malformed or mismatched file.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace deml
