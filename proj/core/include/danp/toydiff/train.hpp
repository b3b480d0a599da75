#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "danp/toydiff/dataset.hpp"
#include "danp/toydiff/model.hpp"

namespace danp::toydiff {

struct TrainConfig {
  std::size_t steps = 800;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Draws of (t, eps) per held-out item for the Monte-Carlo loss.
  std::size_t holdout_draws = 8;
  /// Held-out loss must end below this (per-element MSE).
  double holdout_threshold = 0.4;
  std::size_t log_every = 10;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossPoint {
  std::size_t step = 0;
  double train_loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
  bool passed_threshold = false;
};

/// Per-element MSE between eps and eps_theta(x_t, t, caption) for one draw.
double denoising_loss(const DenoiserModel& model, const DatasetItem& item, std::size_t t,
                      const diffcore::Tensor& eps);

/// Fixed-seed Monte-Carlo estimate of the denoising objective.
double holdout_loss(const DenoiserModel& model, const std::vector<DatasetItem>& items, std::size_t draws,
                    std::uint64_t seed);

/// Adam on the denoising objective with uniformly sampled timesteps.
/// Deterministic given the config seed. Throws NumericError on divergence.
TrainResult train(DenoiserModel& model, const std::vector<DatasetItem>& train_items,
                  const std::vector<DatasetItem>& holdout_items, const TrainConfig& config,
                  const std::function<void(const LossPoint&)>& on_log = {});

}  // namespace danp::toydiff
