#pragma once

#include <filesystem>
#include <vector>

#include "danp/diffcore/tensor.hpp"

namespace danp::io {

/// Writes an (H,W,3) image with values in [0,1] as binary P6. Values are
/// clamped and rounded to the nearest 8-bit level.
void write_ppm(const std::filesystem::path& path, const diffcore::Tensor& image);
/// Reads a binary P6 file (maxval 255) into an (H,W,3) tensor in [0,1].
diffcore::Tensor read_ppm(const std::filesystem::path& path);

/// Renders a single-channel map (row-major, values in [0,1]) as a heat
/// image, each cell blown up to `cell` x `cell` pixels.
void write_heatmap_ppm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
                       std::size_t width, std::size_t cell = 4);

}  // namespace danp::io
