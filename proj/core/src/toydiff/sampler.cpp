#include "danp/toydiff/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "danp/error.hpp"

namespace danp::toydiff {

using diffcore::Tensor;

Tensor clamp01(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Tensor reverse_step(const DenoiserModel& model, const Tensor& x_t, std::size_t t, const Prompt& prompt, Rng& rng) {
  if (t < 1 || t >= model.schedule().steps()) throw ContractError("reverse_step: timestep must lie in [1, T)");
  const Tensor eps_hat = predict_noise(model, x_t, t, prompt);
  const Tensor z = normal_tensor(x_t.shape(), rng);
  return ddpm_step(model.schedule(), x_t, eps_hat, t, z);
}

Tensor sample(const DenoiserModel& model, const Prompt& prompt, Rng& rng) {
  Tensor x = normal_tensor(model.image_shape(), rng);
  for (std::size_t t = model.schedule().steps() - 1; t >= 1; --t) x = reverse_step(model, x, t, prompt, rng);
  return x;
}

Tensor edit(const DenoiserModel& model, const Tensor& x, const Prompt& prompt, std::size_t t_edit, Rng& rng) {
  if (t_edit >= model.schedule().steps()) throw ContractError("edit: t_edit must be < T");
  if (x.shape() != model.image_shape()) {
    throw ShapeError("edit", diffcore::shape_string(x.shape()), diffcore::shape_string(model.image_shape()));
  }
  if (t_edit == 0) return clamp01(x);
  Tensor cur = forward_diffuse(model.schedule(), x, t_edit, normal_tensor(x.shape(), rng));
  for (std::size_t t = t_edit; t >= 1; --t) cur = reverse_step(model, cur, t, prompt, rng);
  return clamp01(cur);
}

std::size_t default_edit_timestep(const DenoiserModel& model) {
  return static_cast<std::size_t>(std::lround(0.6 * static_cast<double>(model.schedule().steps())));
}

}  // namespace danp::toydiff
