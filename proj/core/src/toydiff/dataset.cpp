#include "danp/toydiff/dataset.hpp"

#include <cmath>
#include <cstdio>

#include "danp/error.hpp"
#include "danp/rng.hpp"

namespace danp::toydiff {
namespace {

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

std::size_t pick_contrasting(Rng& rng, std::size_t other) {
  std::vector<std::size_t> options;
  for (std::size_t c = 0; c < kPalette.size(); ++c) {
    if (colors_contrast(c, other)) options.push_back(c);
  }
  return options[pick(rng, options.size())];
}

bool inside(const Scene& s, double px, double py) {
  const double dx = px - s.center_x;
  const double dy = py - s.center_y;
  switch (s.shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= s.size * s.size;
    case ShapeKind::kSquare:
      return std::abs(dx) <= s.size / 2 && std::abs(dy) <= s.size / 2;
    case ShapeKind::kTriangle: {
      // apex up, base at the bottom; base width == height == size
      const double top = s.center_y - s.size / 2;
      const double frac = (py - top) / s.size;
      if (frac < 0.0 || frac > 1.0) return false;
      return std::abs(dx) <= frac * s.size / 2;
    }
  }
  return false;
}

}  // namespace

bool colors_contrast(std::size_t a, std::size_t b) {
  float d = 0.0f;
  for (int k = 0; k < 3; ++k) d += std::abs(kPalette[a].rgb[k] - kPalette[b].rgb[k]);
  return d >= 2.0f;
}

DatasetItem render_scene(const Scene& scene, std::size_t image_size, std::string id) {
  DatasetItem item;
  item.id = std::move(id);
  item.scene = scene;
  item.caption = make_caption(scene.shape_color, scene.shape, scene.background_color);
  item.image = diffcore::Tensor({image_size, image_size, 3});
  item.shape_mask.assign(image_size * image_size, 0);
  const auto& fg = kPalette[scene.shape_color].rgb;
  const auto& bg = kPalette[scene.background_color].rgb;
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const bool in = inside(scene, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      const std::size_t p = y * image_size + x;
      item.shape_mask[p] = in ? 1 : 0;
      for (int k = 0; k < 3; ++k) item.image[p * 3 + k] = in ? fg[k] : bg[k];
    }
  }
  return item;
}

ToyDataset generate_dataset(std::uint64_t seed, std::size_t count, std::size_t image_size, const std::string& id_prefix) {
  if (count == 0) throw ConfigError("dataset size must be >= 1");
  if (image_size < 8 || image_size % 4 != 0) throw ConfigError("image size must be a multiple of 4 and >= 8");
  ToyDataset ds;
  ds.seed = seed;
  ds.image_size = image_size;
  const double unit = static_cast<double>(image_size) / 32.0;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {0xda7a, i}));
    Scene s;
    s.shape = static_cast<ShapeKind>(pick(rng, kShapeNames.size()));
    s.shape_color = pick(rng, kPalette.size());
    s.background_color = pick_contrasting(rng, s.shape_color);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double extent = 0.0;  // half-extent used for placement
    switch (s.shape) {
      case ShapeKind::kCircle:
        s.size = unit * (5.0 + 4.0 * u(rng));
        extent = s.size;
        break;
      case ShapeKind::kSquare:
        s.size = unit * (9.0 + 7.0 * u(rng));
        extent = s.size / 2;
        break;
      case ShapeKind::kTriangle:
        s.size = unit * (12.0 + 8.0 * u(rng));
        extent = s.size / 2;
        break;
    }
    const double lo = extent + unit;
    const double hi = static_cast<double>(image_size) - extent - unit;
    s.center_x = lo + (hi - lo) * u(rng);
    s.center_y = lo + (hi - lo) * u(rng);
    char id[64];
    std::snprintf(id, sizeof(id), "%s%04zu", id_prefix.c_str(), i);
    ds.items.push_back(render_scene(s, image_size, id));
  }
  return ds;
}

std::vector<Prompt> unseen_prompts(const DatasetItem& item, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x0115ee, fnv1a64(item.id)}));
  const Scene& s = item.scene;
  auto other_color = [&](std::size_t avoid_a, std::size_t avoid_b) {
    std::vector<std::size_t> options;
    for (std::size_t c = 0; c < kPalette.size(); ++c) {
      if (c != avoid_a && c != avoid_b && colors_contrast(c, s.background_color)) options.push_back(c);
    }
    if (options.empty()) {
      for (std::size_t c = 0; c < kPalette.size(); ++c) {
        if (c != avoid_a && c != avoid_b) options.push_back(c);
      }
    }
    return options[pick(rng, options.size())];
  };
  auto other_shape = [&](ShapeKind avoid) {
    const auto a = static_cast<std::size_t>(avoid);
    return static_cast<ShapeKind>((a + 1 + pick(rng, kShapeNames.size() - 1)) % kShapeNames.size());
  };
  auto other_background = [&]() {
    std::vector<std::size_t> options;
    for (std::size_t c = 0; c < kPalette.size(); ++c) {
      if (c != s.background_color && c != s.shape_color && colors_contrast(c, s.shape_color)) options.push_back(c);
    }
    return options.empty() ? s.background_color : options[pick(rng, options.size())];
  };
  std::vector<Prompt> out;
  out.push_back(make_caption(other_color(s.shape_color, s.background_color), s.shape, s.background_color));
  out.push_back(make_caption(s.shape_color, other_shape(s.shape), s.background_color));
  out.push_back(make_caption(s.shape_color, s.shape, other_background()));
  out.push_back(make_caption(s.background_color, s.shape, s.shape_color));
  out.push_back(make_caption(other_color(s.shape_color, s.background_color), other_shape(s.shape), s.background_color));
  return out;
}

}  // namespace danp::toydiff
