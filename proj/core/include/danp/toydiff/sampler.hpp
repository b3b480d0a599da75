#pragma once

#include "danp/rng.hpp"
#include "danp/toydiff/model.hpp"

namespace danp::toydiff {

/// One ancestral reverse step x_t -> x_{t-1}; requires 1 <= t < T.
diffcore::Tensor reverse_step(const DenoiserModel& model, const diffcore::Tensor& x_t, std::size_t t,
                              const Prompt& prompt, Rng& rng);

/// Full trajectory from x_{T-1} ~ N(0, I) down to x_0 (unclamped).
diffcore::Tensor sample(const DenoiserModel& model, const Prompt& prompt, Rng& rng);

/// SDEdit-style edit: forward-diffuse x to t_edit, denoise back to 0 under
/// `prompt`, clamp to [0,1]. t_edit == 0 returns clamp(x).
diffcore::Tensor edit(const DenoiserModel& model, const diffcore::Tensor& x, const Prompt& prompt, std::size_t t_edit,
                      Rng& rng);

/// Default edit strength: 0.6 * T.
std::size_t default_edit_timestep(const DenoiserModel& model);

diffcore::Tensor clamp01(const diffcore::Tensor& x);

}  // namespace danp::toydiff
