#pragma once

#include <cstddef>
#include <vector>

#include "danp/diffcore/ops.hpp"

namespace danp::toydiff {

/// Linear-beta DDPM schedule. Index t runs over [0, T).
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  std::size_t steps() const noexcept { return beta.size(); }
};

/// beta_t linear from beta_min to beta_max; alpha_bar is the running product
/// of alpha; sigma_t = sqrt(beta_t).
NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max);

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
diffcore::Tensor forward_diffuse(const NoiseSchedule& schedule, const diffcore::Tensor& x0, std::size_t t,
                                 const diffcore::Tensor& eps);
/// Differentiable variant; eps is recorded as a constant.
diffcore::Var forward_diffuse(const NoiseSchedule& schedule, diffcore::Var x0, std::size_t t,
                              const diffcore::Tensor& eps);

/// One ancestral step given a noise estimate:
///   x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z
diffcore::Tensor ddpm_step(const NoiseSchedule& schedule, const diffcore::Tensor& x_t, const diffcore::Tensor& eps_hat,
                           std::size_t t, const diffcore::Tensor& z);

}  // namespace danp::toydiff
