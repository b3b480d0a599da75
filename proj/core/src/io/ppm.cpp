#include "danp/io/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "danp/error.hpp"

namespace danp::io {
namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string next_token(std::istream& is) {
  std::string tok;
  while (is) {
    int c = is.get();
    if (c == '#') {
      while (is && is.get() != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    if (c == EOF) break;
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const diffcore::Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ContractError("write_ppm expects (H,W,3), got " + diffcore::shape_string(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  for (float v : image.data()) os.put(static_cast<char>(to_byte(v)));
  if (!os) throw IoError("write failed: " + path.string());
}

diffcore::Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  if (next_token(is) != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(is));
    h = std::stoul(next_token(is));
    maxval = std::stoul(next_token(is));
  } catch (const std::exception&) {
    throw IoError("malformed PPM header: " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw IoError("unsupported PPM (need maxval 255): " + path.string());
  diffcore::Tensor img({h, w, 3});
  std::vector<unsigned char> bytes(h * w * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw IoError("truncated PPM payload: " + path.string());
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

void write_heatmap_ppm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
                       std::size_t width, std::size_t cell) {
  if (values.size() != height * width) throw ContractError("heatmap size mismatch");
  diffcore::Tensor img({height * cell, width * cell, 3});
  for (std::size_t y = 0; y < height * cell; ++y) {
    for (std::size_t x = 0; x < width * cell; ++x) {
      const double v = std::clamp(values[(y / cell) * width + x / cell], 0.0, 1.0);
      // blue -> cyan -> yellow -> red
      const double r = std::clamp(2.0 * v - 0.5, 0.0, 1.0);
      const double g = std::clamp(1.5 - std::abs(2.0 * v - 1.0) * 1.5, 0.0, 1.0);
      const double b = std::clamp(1.0 - 2.0 * v + 0.5, 0.0, 1.0);
      float* px = img.data().data() + (y * width * cell + x) * 3;
      px[0] = static_cast<float>(r);
      px[1] = static_cast<float>(g);
      px[2] = static_cast<float>(b);
    }
  }
  write_ppm(path, img);
}

}  // namespace danp::io
