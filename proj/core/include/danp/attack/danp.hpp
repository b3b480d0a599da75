#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "danp/attnmask/mask.hpp"
#include "danp/diffcore/ops.hpp"
#include "danp/toydiff/model.hpp"

namespace danp::attack {

enum class Method { kNone, kRandomNoise, kSaStyle, kDanp, kWoDaa, kWoNba };

/// Display name: "none", "random-noise", "sa-style", "danp", "w/o-daa", "w/o-nba".
std::string_view method_name(Method m);
/// Filesystem-safe name ("wo-daa" instead of "w/o-daa").
std::string method_slug(Method m);
/// Accepts display names and slugs. Throws ConfigError.
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();
/// Methods that perturb the image.
bool is_budgeted(Method m);

struct AttackConfig {
  double gamma = 0.03;
  double alpha_step = 0.003;
  std::size_t iterations = 100;
  std::size_t timestep_count = 10;
  /// Explicit timestep set; empty means evenly spaced over [1, T-1].
  std::vector<std::size_t> timesteps;
  double lambda_daa = 1.0;
  double lambda_nba = 1.0;
  std::size_t bins = 128;
  /// Fixed threshold on raw maps used by the suppression-only baseline.
  double sa_threshold = 0.02;
  std::uint64_t seed = 0;
  bool keep_masks = false;

  /// Resolved timestep set for a model with `steps` timesteps.
  std::vector<std::size_t> resolved_timesteps(std::size_t steps) const;
  /// Throws ConfigError.
  void validate(std::size_t steps) const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

/// Config as it applies to one method: terms a method does not use are
/// dropped (the suppression-only baseline has no amplification weight).
nlohmann::json method_config_json(const AttackConfig& c, Method m);

/// Which loss terms enter the objective.
struct LossTerms {
  bool use_daa = true;
  bool suppression_only = false;
  double lambda_daa = 1.0;
  double lambda_nba = 1.0;
  std::size_t bins = 128;
  /// > 0 selects a fixed raw-map threshold instead of Kapur's method.
  double fixed_threshold = 0.0;

  static LossTerms for_method(Method m, const AttackConfig& c);
};

/// ||Att * M||^2 - lambda * ||Att * (1 - M)||^2 with M held constant.
diffcore::Var daa_loss(diffcore::Var att, const diffcore::Tensor& mask, double lambda_daa);
/// ||Att * M||^2 only.
diffcore::Var suppression_loss(diffcore::Var att, const diffcore::Tensor& mask);
/// -||eps_clean - eps_imu||^2
diffcore::Var nba_loss(diffcore::Var eps_clean, diffcore::Var eps_imu);

/// Components as they enter the total: DAA divided by the mask pixel count,
/// NBA by the noise element count. The *_raw fields hold the unscaled sums.
struct LossValue {
  double daa = 0.0;
  double nba = 0.0;
  double daa_raw = 0.0;
  double nba_raw = 0.0;
  double total = 0.0;
  std::optional<attnmask::BinaryMask> mask;
  /// Gradient with respect to x_imu = x0 + delta; empty unless requested.
  std::optional<diffcore::Tensor> grad;
};

/// L_DAA / (H*W) + lambda_nba * L_NBA / numel at one timestep. Both branches are
/// diffused with `shared_eps`. The mask comes from the current imu branch
/// unless `mask_override` supplies a fixed (H, W) 0/1 array.
LossValue total_loss(const diffcore::Tensor& x0, const diffcore::Tensor& delta, const toydiff::DenoiserModel& model,
                     const toydiff::Prompt& prompt, std::size_t t, const diffcore::Tensor& shared_eps,
                     const LossTerms& terms, bool want_grad, const diffcore::Tensor* mask_override = nullptr);

struct MaskInfo {
  std::size_t timestep = 0;
  double threshold = 0.0;
  std::size_t ones = 0;
  std::uint64_t checksum = 0;
  bool degenerate = false;
  std::vector<std::uint8_t> mask;  // only when keep_masks
};

struct IterationTrace {
  std::size_t iteration = 0;
  double daa = 0.0;
  double nba = 0.0;
  double total = 0.0;
  std::vector<MaskInfo> masks;
};

struct PerturbationState {
  diffcore::Tensor delta;
  std::size_t iteration = 0;
  std::vector<IterationTrace> trace;
  std::size_t degenerate_iterations = 0;
  std::vector<std::string> warnings;

  double linf() const;
};

struct ImmunizeResult {
  diffcore::Tensor x_imu;
  PerturbationState state;
};

/// Clip to [-gamma, gamma], then shrink coordinates whose x0 + delta
/// leaves [0,1].
void project(diffcore::Tensor& delta, const diffcore::Tensor& x0, double gamma);

/// Sign-gradient immunization over the configured timesteps.
ImmunizeResult immunize(const diffcore::Tensor& x0, const toydiff::Prompt& prompt, const toydiff::DenoiserModel& model,
                        const AttackConfig& cfg, Method method = Method::kDanp);

/// Uniform +-gamma sign noise, projected into the valid image range.
ImmunizeResult random_noise(const diffcore::Tensor& x0, const AttackConfig& cfg);

/// Dispatches on method, including "none" and "random-noise".
ImmunizeResult run_method(const diffcore::Tensor& x0, const toydiff::Prompt& prompt,
                          const toydiff::DenoiserModel& model, const AttackConfig& cfg, Method method);

/// Per-image attack report.
nlohmann::json attack_report(const ImmunizeResult& r, const AttackConfig& cfg, Method method);

}  // namespace danp::attack
