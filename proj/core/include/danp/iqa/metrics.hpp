#pragma once

#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "danp/diffcore/tensor.hpp"
#include "danp/toydiff/model.hpp"

namespace danp::iqa {

/// Identical inputs return this cap.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for data range 1, capped at kPsnrCap.
double psnr(const diffcore::Tensor& a, const diffcore::Tensor& b);

/// Unweighted channel mean of an (H,W,C) image, row-major (H*W).
std::vector<double> grayscale(const diffcore::Tensor& image);

/// Mean SSIM on channel-mean grayscale: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, data range 1, windows fully inside the image.
double ssim(const diffcore::Tensor& a, const diffcore::Tensor& b);

struct VifResult {
  double value = 1.0;
  /// Set when the reference carries no signal variance; value is then 1.
  bool degenerate = false;
};

/// Pixel-domain VIF over 4 dyadic scales (Gaussian windows 17, 9, 5, 3 with
/// sigma N/5), sigma_n^2 = 2 on the 0..255 scale. `reference` comes first;
/// the metric is not symmetric. Filtering uses same-size output with
/// symmetric edge padding.
VifResult vifp(const diffcore::Tensor& reference, const diffcore::Tensor& distorted);

/// Toy feature distance: bottleneck activations of the denoiser at t = 1
/// under the empty prompt, each spatial feature vector scaled to unit
/// length, mean over positions of the squared difference. Throws
/// ContractError for an untrained model.
double percep_dist(const diffcore::Tensor& a, const diffcore::Tensor& b, const toydiff::DenoiserModel& model);

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double vifp = 0.0;
  double percep_dist = 0.0;
  bool vifp_degenerate = false;
};

MetricsReport compute_metrics(const diffcore::Tensor& a, const diffcore::Tensor& b,
                              const toydiff::DenoiserModel& model);

enum class Direction { kLowerIsStronger, kHigherIsStronger };

struct MetricInfo {
  std::string_view name;
  /// Direction for defense comparisons (edit of clean vs edit of immunized).
  Direction defense;
};

/// psnr, ssim, vifp, percep_dist in report order.
const std::vector<MetricInfo>& metric_infos();
std::string_view arrow(Direction d);
double metric_value(const MetricsReport& r, std::string_view name);

nlohmann::json to_json(const MetricsReport& r);

}  // namespace danp::iqa
