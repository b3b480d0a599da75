#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "danp/diffcore/tensor.hpp"
#include "danp/toydiff/prompt.hpp"

namespace danp::toydiff {

struct Scene {
  ShapeKind shape = ShapeKind::kCircle;
  std::size_t shape_color = 0;
  std::size_t background_color = 1;
  double center_x = 0.0;
  double center_y = 0.0;
  /// Circle radius, square side, or triangle base (= height), in pixels.
  double size = 0.0;
};

struct DatasetItem {
  std::string id;
  diffcore::Tensor image;  // (H,W,3) in [0,1]
  Prompt caption;
  Scene scene;
  std::vector<std::uint8_t> shape_mask;  // H*W, 1 inside the shape
};

/// Procedurally rendered scenes: one flat-colored shape on a contrasting
/// flat background. Fully determined by (seed, count, image_size).
struct ToyDataset {
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::vector<DatasetItem> items;
};

ToyDataset generate_dataset(std::uint64_t seed, std::size_t count, std::size_t image_size = 32,
                            const std::string& id_prefix = "img");

/// Rasterizes a scene; samples at pixel centers.
DatasetItem render_scene(const Scene& scene, std::size_t image_size, std::string id);

/// Palette L1 distance >= 2 between shape and background colors.
bool colors_contrast(std::size_t a, std::size_t b);

/// Five captions that differ from the item's own caption in color, shape,
/// background, or role, drawn deterministically from `seed`.
std::vector<Prompt> unseen_prompts(const DatasetItem& item, std::uint64_t seed);

}  // namespace danp::toydiff
