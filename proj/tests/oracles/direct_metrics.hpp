#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// Direct-formula PSNR and SSIM. Images are row-major (H, W, C) float arrays.
// No helpers are shared with the library implementation.
namespace oracle {

inline double psnr_direct(const std::vector<float>& a, const std::vector<float>& b) {
  long double se = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    se += d * d;
  }
  const long double mse = se / static_cast<long double>(a.size());
  if (mse == 0.0L) return 100.0;
  const double v = static_cast<double>(-10.0L * std::log10(mse));
  return v > 100.0 ? 100.0 : v;
}

// 11x11 window with weights exp(-(dx^2+dy^2)/(2*1.5^2)), normalized over the
// full 2-D window; every window position evaluated explicitly.
inline double ssim_direct(const std::vector<float>& a, const std::vector<float>& b, std::size_t h, std::size_t w,
                          std::size_t c) {
  const int n = 11;
  double win[11][11];
  double total = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dy = y - 5, dx = x - 5;
      win[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      total += win[y][x];
    }
  for (auto& row : win)
    for (double& v : row) v /= total;

  auto gray = [&](const std::vector<float>& img, std::size_t y, std::size_t x) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += img[(y * w + x) * c + k];
    return s / static_cast<double>(c);
  };
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + n <= h; ++y0) {
    for (std::size_t x0 = 0; x0 + n <= w; ++x0) {
      double mx = 0, my = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          mx += win[y][x] * gray(a, y0 + y, x0 + x);
          my += win[y][x] * gray(b, y0 + y, x0 + x);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double da = gray(a, y0 + y, x0 + x) - mx, db = gray(b, y0 + y, x0 + x) - my;
          vx += win[y][x] * da * da;
          vy += win[y][x] * db * db;
          cxy += win[y][x] * da * db;
        }
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace oracle
