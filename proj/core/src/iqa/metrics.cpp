#include "danp/iqa/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "danp/error.hpp"

namespace danp::iqa {

using diffcore::Tensor;

namespace {

void require_same(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(name, diffcore::shape_string(a.shape()), diffcore::shape_string(b.shape()));
  }
  if (a.rank() != 3) throw ContractError(std::string(name) + ": expected an (H,W,C) image");
}

std::vector<double> gaussian_1d(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

// Separable filtering, output restricted to windows fully inside the plane.
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
  const std::size_t n = k.size();
  Plane rows{in.h, in.w - n + 1, {}};
  rows.v.assign(rows.h * rows.w, 0.0);
  for (std::size_t y = 0; y < rows.h; ++y)
    for (std::size_t x = 0; x < rows.w; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * in.at(y, x + i);
      rows.v[y * rows.w + x] = acc;
    }
  Plane out{in.h - n + 1, rows.w, {}};
  out.v.assign(out.h * out.w, 0.0);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows.at(y + i, x);
      out.v[y * out.w + x] = acc;
    }
  return out;
}

// Symmetric (half-sample) index reflection.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= sn) i = i < 0 ? -i - 1 : 2 * sn - i - 1;
  return static_cast<std::size_t>(i);
}

Plane filter_same(const Plane& in, const std::vector<double>& k) {
  const auto half = static_cast<std::ptrdiff_t>(k.size() / 2);
  Plane rows{in.h, in.w, std::vector<double>(in.h * in.w, 0.0)};
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) {
        acc += k[i] * in.at(y, reflect(static_cast<std::ptrdiff_t>(x + i) - half, in.w));
      }
      rows.v[y * in.w + x] = acc;
    }
  Plane out{in.h, in.w, std::vector<double>(in.h * in.w, 0.0)};
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) {
        acc += k[i] * rows.at(reflect(static_cast<std::ptrdiff_t>(y + i) - half, in.h), x);
      }
      out.v[y * in.w + x] = acc;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

Plane downsample2(const Plane& in) {
  Plane out{(in.h + 1) / 2, (in.w + 1) / 2, {}};
  out.v.resize(out.h * out.w);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) out.v[y * out.w + x] = in.at(2 * y, 2 * x);
  return out;
}

Plane gray_plane(const Tensor& image, double scale) {
  Plane p{image.dim(0), image.dim(1), grayscale(image)};
  for (double& v : p.v) v *= scale;
  return p;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr", diffcore::shape_string(a.shape()), diffcore::shape_string(b.shape()));
  double se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> grayscale(const Tensor& image) {
  if (image.rank() != 3) throw ContractError("grayscale: expected an (H,W,C) image");
  const std::size_t hw = image.dim(0) * image.dim(1), c = image.dim(2);
  std::vector<double> out(hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += image[i * c + k];
    out[i] = acc / static_cast<double>(c);
  }
  return out;
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same("ssim", a, b);
  constexpr std::size_t kWin = 11;
  if (a.dim(0) < kWin || a.dim(1) < kWin) throw ContractError("ssim: image smaller than the 11x11 window");
  const auto k = gaussian_1d(kWin, 1.5);
  const Plane x = gray_plane(a, 1.0), y = gray_plane(b, 1.0);
  const Plane mx = filter_valid(x, k), my = filter_valid(y, k);
  const Plane sxx = filter_valid(product(x, x), k), syy = filter_valid(product(y, y), k),
              sxy = filter_valid(product(x, y), k);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.v.size(); ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy, cxy = sxy.v[i] - ux * uy;
    total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.v.size());
}

VifResult vifp(const Tensor& reference, const Tensor& distorted) {
  require_same("vifp", reference, distorted);
  constexpr double kSigmaN = 2.0;
  constexpr double kTiny = 1e-10;
  Plane ref = gray_plane(reference, 255.0), dist = gray_plane(distorted, 255.0);
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    const std::size_t n = (std::size_t{1} << (4 - scale + 1)) + 1;
    const auto k = gaussian_1d(n, static_cast<double>(n) / 5.0);
    if (scale > 1) {
      ref = downsample2(filter_same(ref, k));
      dist = downsample2(filter_same(dist, k));
    }
    const Plane mu1 = filter_same(ref, k), mu2 = filter_same(dist, k);
    const Plane r2 = filter_same(product(ref, ref), k), d2 = filter_same(product(dist, dist), k),
                rd = filter_same(product(ref, dist), k);
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
      double s1 = std::max(0.0, r2.v[i] - mu1.v[i] * mu1.v[i]);
      const double s2 = std::max(0.0, d2.v[i] - mu2.v[i] * mu2.v[i]);
      const double s12 = rd.v[i] - mu1.v[i] * mu2.v[i];
      double g = s12 / (s1 + kTiny);
      double sv = s2 - g * s12;
      if (s1 < kTiny) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kTiny) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, kTiny);
      num += std::log10(1.0 + g * g * s1 / (sv + kSigmaN));
      den += std::log10(1.0 + s1 / kSigmaN);
    }
  }
  if (!(den > 0.0)) return {1.0, true};
  return {num / den, false};
}

namespace {

std::vector<double> unit_features(const Tensor& image, const toydiff::DenoiserModel& model) {
  diffcore::Tape tape;
  auto fwd = toydiff::predict_noise(model, tape.constant(image), 1, toydiff::empty_prompt(), false);
  const Tensor& f = fwd.bottleneck.value();
  const std::size_t positions = f.dim(0), channels = f.dim(1);
  std::vector<double> out(f.numel());
  for (std::size_t p = 0; p < positions; ++p) {
    double norm = 0.0;
    for (std::size_t c = 0; c < channels; ++c) norm += static_cast<double>(f[p * channels + c]) * f[p * channels + c];
    norm = std::sqrt(norm) + 1e-10;
    for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] = f[p * channels + c] / norm;
  }
  return out;
}

}  // namespace

double percep_dist(const Tensor& a, const Tensor& b, const toydiff::DenoiserModel& model) {
  require_same("percep_dist", a, b);
  if (model.training_steps() == 0) throw ContractError("percep_dist: model is untrained");
  const auto fa = unit_features(a, model), fb = unit_features(b, model);
  const std::size_t positions = (model.config().image_size / 4) * (model.config().image_size / 4);
  double total = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double d = fa[i] - fb[i];
    total += d * d;
  }
  return total / static_cast<double>(positions);
}

MetricsReport compute_metrics(const Tensor& a, const Tensor& b, const toydiff::DenoiserModel& model) {
  MetricsReport r;
  r.psnr = psnr(a, b);
  r.ssim = ssim(a, b);
  const auto v = vifp(a, b);
  r.vifp = v.value;
  r.vifp_degenerate = v.degenerate;
  r.percep_dist = percep_dist(a, b, model);
  return r;
}

const std::vector<MetricInfo>& metric_infos() {
  static const std::vector<MetricInfo> infos = {
      {"psnr", Direction::kLowerIsStronger},
      {"ssim", Direction::kLowerIsStronger},
      {"vifp", Direction::kLowerIsStronger},
      {"percep_dist", Direction::kHigherIsStronger},
  };
  return infos;
}

std::string_view arrow(Direction d) { return d == Direction::kLowerIsStronger ? "↓" : "↑"; }

double metric_value(const MetricsReport& r, std::string_view name) {
  if (name == "psnr") return r.psnr;
  if (name == "ssim") return r.ssim;
  if (name == "vifp") return r.vifp;
  if (name == "percep_dist") return r.percep_dist;
  throw ContractError("unknown metric '" + std::string(name) + "'");
}

nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{{"psnr", r.psnr},
                        {"ssim", r.ssim},
                        {"vifp", r.vifp},
                        {"percep_dist", r.percep_dist},
                        {"vifp_degenerate", r.vifp_degenerate}};
}

}  // namespace danp::iqa
