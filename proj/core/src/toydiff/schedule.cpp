#include "danp/toydiff/schedule.hpp"

#include <cmath>
#include <string>

#include "danp/error.hpp"

namespace danp::toydiff {

using diffcore::Tensor;
using diffcore::Var;

NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 2) throw ConfigError("schedule needs at least 2 steps, got " + std::to_string(steps));
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_min < beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  double running = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) / static_cast<double>(steps - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    running *= s.alpha[t];
    s.alpha_bar[t] = running;
    s.sigma[t] = std::sqrt(s.beta[t]);
  }
  return s;
}

Tensor forward_diffuse(const NoiseSchedule& schedule, const Tensor& x0, std::size_t t, const Tensor& eps) {
  if (t >= schedule.steps()) throw ContractError("forward_diffuse: timestep out of range");
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_diffuse", diffcore::shape_string(x0.shape()), diffcore::shape_string(eps.shape()));
  }
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    out[i] = static_cast<float>(static_cast<float>(x0[i] * a) + static_cast<float>(eps[i] * b));
  }
  return out;
}

Var forward_diffuse(const NoiseSchedule& schedule, Var x0, std::size_t t, const Tensor& eps) {
  if (t >= schedule.steps()) throw ContractError("forward_diffuse: timestep out of range");
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_diffuse", diffcore::shape_string(x0.shape()), diffcore::shape_string(eps.shape()));
  }
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  Var noise = x0.tape().constant(eps);
  return diffcore::add(diffcore::scale(x0, a), diffcore::scale(noise, b));
}

Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                 const Tensor& z) {
  if (t < 1 || t >= schedule.steps()) throw ContractError("reverse step: timestep must lie in [1, T)");
  if (x_t.shape() != eps_hat.shape() || x_t.shape() != z.shape()) {
    throw ShapeError("ddpm_step", diffcore::shape_string(x_t.shape()), diffcore::shape_string(eps_hat.shape()));
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  const double eps_coef = (1.0 - schedule.alpha[t]) / std::sqrt(1.0 - schedule.alpha_bar[t]);
  const double sigma = schedule.sigma[t];
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<float>((x_t[i] - eps_coef * eps_hat[i]) * inv_sqrt_alpha + sigma * z[i]);
  }
  return out;
}

}  // namespace danp::toydiff
