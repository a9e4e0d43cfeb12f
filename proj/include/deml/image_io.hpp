#pragma once

#include <cstddef>
#include <filesystem>
#include <span>

#include "deml/tensor.hpp"

namespace deml {

// Reads a binary PGM (P5) or PPM (P6) with maxval <= 255 into a [1 x H x W]
// tensor scaled to [0, 1]; PPM is converted to gray by channel mean.
// Throws FormatError with the byte offset of the problem.
Tensor read_image(const std::filesystem::path& path);

// Writes an 8-bit P5 file, min-max scaling the map to [0, 255]. A constant
// map is written as zeros. Accepts [H x W] or [1 x H x W].
void write_pgm(const Tensor& map, const std::filesystem::path& path);
void write_pgm(std::span<const double> plane, std::size_t height, std::size_t width,
               const std::filesystem::path& path);

// Writes values already in [0, 1] without rescaling.
void write_pgm_unit(const Tensor& image, const std::filesystem::path& path);

}  // namespace deml
