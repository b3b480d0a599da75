#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "danp/iqa/metrics.hpp"
#include "danp/rng.hpp"
#include "danp/toydiff/dataset.hpp"
#include "danp/toydiff/train.hpp"
#include "direct_metrics.hpp"

// Metric sanity checks shared by the unit and acceptance suites.
namespace oracle {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline danp::diffcore::Tensor random_smooth_image(std::uint64_t seed, std::size_t n = 32) {
  danp::Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  danp::diffcore::Tensor t({n, n, 3});
  double fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 0.1 + 0.5 * u(rng);
    fy[c] = 0.1 + 0.5 * u(rng);
    ph[c] = 6.28 * u(rng);
  }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.3 * std::sin(fx[c] * x + fy[c] * y + ph[c]) + 0.15 * (u(rng) - 0.5);
        t[(y * n + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return t;
}

inline danp::diffcore::Tensor add_noise(const danp::diffcore::Tensor& x, double sigma, std::uint64_t seed) {
  danp::Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  danp::diffcore::Tensor out = x;
  for (auto& v : out.data()) v = static_cast<float>(v + sigma * n(rng));
  return out;
}

inline danp::diffcore::Tensor box_blur(const danp::diffcore::Tensor& x, int radius) {
  const int h = static_cast<int>(x.dim(0)), w = static_cast<int>(x.dim(1)), c = static_cast<int>(x.dim(2));
  danp::diffcore::Tensor out(x.shape());
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int k = 0; k < c; ++k) {
        double s = 0.0;
        int count = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = std::clamp(y + dy, 0, h - 1), xs = std::clamp(xx + dx, 0, w - 1);
            s += x[(yy * w + xs) * c + k];
            ++count;
          }
        out[(y * w + xx) * c + k] = static_cast<float>(s / count);
      }
  return out;
}

inline danp::diffcore::Tensor lerp(const danp::diffcore::Tensor& a, const danp::diffcore::Tensor& b, double f) {
  danp::diffcore::Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = static_cast<float>((1.0 - f) * a[i] + f * b[i]);
  return out;
}

// A 32x32 model with a handful of optimizer steps; enough for the feature
// distance precondition.
inline danp::toydiff::DenoiserModel lightly_trained_model(const std::vector<danp::toydiff::DatasetItem>& items) {
  danp::toydiff::ModelConfig mc;
  mc.init_seed = 3;
  danp::toydiff::DenoiserModel model(mc);
  danp::toydiff::TrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 2;
  (void)danp::toydiff::train(model, items, {}, tc);
  return model;
}

inline std::vector<PropertyResult> metric_properties() {
  using danp::diffcore::Tensor;
  namespace iqa = danp::iqa;
  std::vector<PropertyResult> out;
  auto record = [&](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass, std::move(detail)});
  };
  char buf[160];

  const Tensor x = random_smooth_image(11);
  const double s_self = iqa::ssim(x, x);
  std::snprintf(buf, sizeof buf, "ssim(x,x)=%.9f", s_self);
  record("ssim identity", std::fabs(s_self - 1.0) <= 1e-6, buf);

  const double v_self = iqa::vifp(x, x).value;
  std::snprintf(buf, sizeof buf, "vifp(x,x)=%.9f", v_self);
  record("vifp identity", std::fabs(v_self - 1.0) <= 1e-3, buf);

  record("psnr identity cap", iqa::psnr(x, x) == iqa::kPsnrCap, "");

  double worst_psnr = 0.0, worst_ssim = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Tensor a = random_smooth_image(100 + k);
    const Tensor b = k % 2 ? random_smooth_image(200 + k) : add_noise(a, 0.02 * (k + 1), 300 + k);
    const std::vector<float> av(a.data().begin(), a.data().end()), bv(b.data().begin(), b.data().end());
    worst_psnr = std::max(worst_psnr, std::fabs(iqa::psnr(a, b) - psnr_direct(av, bv)));
    worst_ssim = std::max(worst_ssim, std::fabs(iqa::ssim(a, b) - ssim_direct(av, bv, 32, 32, 3)));
  }
  std::snprintf(buf, sizeof buf, "max |psnr - oracle| = %.3g over 20 pairs", worst_psnr);
  record("psnr oracle", worst_psnr <= 1e-6, buf);
  std::snprintf(buf, sizeof buf, "max |ssim - oracle| = %.3g over 20 pairs", worst_ssim);
  record("ssim oracle", worst_ssim <= 1e-6, buf);

  Tensor zero({8, 8, 3}, 0.0f), half({8, 8, 3}, 0.5f), shifted = x;
  for (auto& v : shifted.data()) v += 0.03f;
  const double p_half = iqa::psnr(zero, half), p_shift = iqa::psnr(x, shifted);
  std::snprintf(buf, sizeof buf, "psnr(0,0.5)=%.6f psnr(x,x+0.03)=%.6f", p_half, p_shift);
  record("psnr analytic", std::fabs(p_half - 6.0206) <= 1e-4 && std::fabs(p_shift - 30.4576) <= 1e-3, buf);

  const Tensor y = random_smooth_image(12);
  const double asym = std::fabs(iqa::ssim(x, y) - iqa::ssim(y, x));
  std::snprintf(buf, sizeof buf, "|ssim(a,b)-ssim(b,a)|=%.3g", asym);
  record("ssim symmetry", asym <= 1e-6, buf);

  const double s1 = iqa::ssim(x, add_noise(x, 0.01, 7)), s2 = iqa::ssim(x, add_noise(x, 0.05, 7)),
               s3 = iqa::ssim(x, add_noise(x, 0.1, 7));
  std::snprintf(buf, sizeof buf, "ssim at noise 0.01/0.05/0.1: %.6f %.6f %.6f", s1, s2, s3);
  record("ssim noise monotonicity", s1 > s2 && s2 > s3, buf);

  const double vl = iqa::vifp(x, box_blur(x, 1)).value, vh = iqa::vifp(x, box_blur(x, 3)).value;
  std::snprintf(buf, sizeof buf, "vifp light blur %.6f heavy blur %.6f", vl, vh);
  record("vifp blur monotonicity", vh < vl, buf);

  const double vn = iqa::vifp(x, add_noise(x, 0.1, 9)).value;
  std::snprintf(buf, sizeof buf, "vifp(x, x+noise 0.1)=%.6f", vn);
  record("vifp noise below one", vn < 1.0, buf);

  const auto data = danp::toydiff::generate_dataset(2024, 6, 32);
  const auto model = lightly_trained_model(data.items);
  const Tensor& a = data.items[0].image;
  const Tensor& b = data.items[1].image;
  const double d_self = iqa::percep_dist(a, a, model);
  record("percep_dist identity", d_self == 0.0, "");
  const double dab = iqa::percep_dist(a, b, model), dba = iqa::percep_dist(b, a, model);
  std::snprintf(buf, sizeof buf, "|d(a,b)-d(b,a)|=%.3g", std::fabs(dab - dba));
  record("percep_dist symmetry", std::fabs(dab - dba) <= 1e-6, buf);
  const double d25 = iqa::percep_dist(a, lerp(a, b, 0.25), model), d50 = iqa::percep_dist(a, lerp(a, b, 0.5), model),
               d100 = iqa::percep_dist(a, lerp(a, b, 1.0), model);
  std::snprintf(buf, sizeof buf, "percep_dist at 0.25/0.5/1.0: %.6f %.6f %.6f", d25, d50, d100);
  record("percep_dist interpolation monotonicity", d25 < d50 && d50 < d100, buf);
  return out;
}

}  // namespace oracle
