#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "danp/attnmask/record.hpp"
#include "danp/diffcore/ops.hpp"
#include "danp/toydiff/prompt.hpp"
#include "danp/toydiff/schedule.hpp"

namespace danp::toydiff {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t width_full = 16;     // channels at full resolution
  std::size_t width_half = 32;     // channels at 1/2 resolution (first attention block)
  std::size_t width_quarter = 32;  // channels at 1/4 resolution (second attention block)
  std::size_t text_dim = 32;
  std::size_t key_dim = 16;
  std::size_t time_dim = 32;
  std::size_t time_freqs = 8;
  std::size_t timesteps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::uint64_t init_seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parameter slots, in serialization order.
enum class Param : std::size_t {
  kTokenTable, kPositionTable,
  kTimeW, kTimeB,
  kEnc0W, kEnc0B, kEnc0T,
  kEnc1W, kEnc1B, kEnc1T,
  kAttn1Q, kAttn1K, kAttn1V, kAttn1O,
  kEnc2W, kEnc2B, kEnc2T,
  kAttn2Q, kAttn2K, kAttn2V, kAttn2O,
  kMidW, kMidB, kMidT,
  kDec1W, kDec1B, kDec1T,
  kDec0W, kDec0B, kDec0T,
  kOutW, kOutB,
  kCount
};

/// Text-conditioned noise predictor. Dense per-pixel encoder at full, 1/2
/// and 1/4 resolution (avg-pool between levels), cross-attention to the
/// prompt at 1/2 and 1/4 resolution, nearest-upsample decoder with skip
/// concatenation. A sinusoidal time embedding is projected into every level.
class DenoiserModel {
 public:
  explicit DenoiserModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }

  const std::vector<diffcore::Tensor>& params() const noexcept { return params_; }
  std::vector<diffcore::Tensor>& params() noexcept { return params_; }
  const diffcore::Tensor& param(Param p) const { return params_[static_cast<std::size_t>(p)]; }
  static const std::vector<std::string>& param_names();
  std::size_t parameter_count() const;

  /// Optimizer steps applied so far; 0 means untrained.
  std::size_t training_steps() const noexcept { return training_steps_; }
  void set_training_steps(std::size_t n) noexcept { training_steps_ = n; }

  diffcore::Shape image_shape() const { return {config_.image_size, config_.image_size, 3}; }

  void save(const std::filesystem::path& path) const;
  static DenoiserModel load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  NoiseSchedule schedule_;
  std::vector<diffcore::Tensor> params_;
  std::size_t training_steps_ = 0;
};

struct ForwardResult {
  diffcore::Var eps;
  /// Activations at 1/4 resolution after the middle block, (H/4*W/4, C).
  diffcore::Var bottleneck;
  std::optional<attnmask::AttentionRecord> attention;
};

/// Records every parameter on `tape`, as gradient leaves or as constants.
std::vector<diffcore::Var> bind_params(const DenoiserModel& model, diffcore::Tape& tape, bool requires_grad);

/// Noise prediction for x_t (shape (H,W,3)) at timestep t. Parameters are
/// bound as constants unless `params` supplies an existing binding.
ForwardResult predict_noise(const DenoiserModel& model, diffcore::Var x_t, std::size_t t, const Prompt& prompt,
                            bool capture_attention, const std::vector<diffcore::Var>* params = nullptr);

/// Gradient-free convenience wrapper.
diffcore::Tensor predict_noise(const DenoiserModel& model, const diffcore::Tensor& x_t, std::size_t t,
                               const Prompt& prompt);

/// (S, text_dim) prompt matrix: token table rows plus position table.
diffcore::Tensor embed_prompt(const DenoiserModel& model, const Prompt& prompt);

}  // namespace danp::toydiff
