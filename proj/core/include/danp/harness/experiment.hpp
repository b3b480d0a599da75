#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "danp/attack/danp.hpp"
#include "danp/iqa/metrics.hpp"
#include "danp/toydiff/dataset.hpp"
#include "danp/toydiff/model.hpp"
#include "danp/toydiff/train.hpp"

namespace danp::harness {

enum class PromptPolicy { kOriginal, kUnseen, kAll };

std::string_view policy_name(PromptPolicy p);
PromptPolicy parse_policy(std::string_view s);

struct DataConfig {
  std::size_t train_count = 40;
  std::size_t test_count = 20;
  std::size_t image_size = 32;
};

struct EditConfig {
  /// 0 selects the model default (0.6 T).
  std::size_t t_edit = 0;
  PromptPolicy policy = PromptPolicy::kAll;
};

struct AblationConfig {
  /// Number of leading test images used by the ablation runs.
  std::size_t images = 4;
  /// 0 keeps the attack's iteration count.
  std::size_t iterations = 0;
  std::vector<std::size_t> bins = {32, 64, 128, 256};
  /// Repeats of the mask timing measurement; the median is reported.
  std::size_t timing_repeats = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  toydiff::ModelConfig model;
  toydiff::TrainConfig train;
  attack::AttackConfig attack;
  EditConfig edit;
  std::vector<attack::Method> methods = attack::all_methods();
  AblationConfig ablation;

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown top-level keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Hex FNV-1a of the canonical JSON dump.
std::string content_hash(const nlohmann::json& j);

/// Stage directories under an output root, each named <stage>-<hash> where
/// the hash covers every config section the stage depends on.
struct StagePaths {
  std::filesystem::path root;
  std::filesystem::path data;
  std::filesystem::path model;
  std::filesystem::path immunize;
  std::filesystem::path evaluate;
  std::filesystem::path ablate;
  std::filesystem::path report;
  std::string config_hash;
};

StagePaths stage_paths(const ExperimentConfig& c, const std::filesystem::path& root);

/// Progress messages; may be empty.
using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  std::filesystem::path out = "runs";
  std::size_t jobs = 1;
  /// Reuse a stage whose completion marker exists.
  bool reuse = true;
  Logger log;
};

struct LoadedData {
  std::vector<toydiff::DatasetItem> train;
  std::vector<toydiff::DatasetItem> test;
};

/// Seeds derived from the experiment seed.
std::uint64_t image_attack_seed(const ExperimentConfig& c, std::size_t image_index);
std::uint64_t edit_seed(const ExperimentConfig& c, std::size_t image_index, std::size_t prompt_index);

/// Prompts for one test item under the edit policy; index 0 is the
/// original caption when the policy includes it.
std::vector<toydiff::Prompt> edit_prompts(const ExperimentConfig& c, const toydiff::DatasetItem& item,
                                          std::size_t image_index);

std::filesystem::path cmd_gen_data(const ExperimentConfig& c, const RunOptions& opt);
LoadedData load_data(const ExperimentConfig& c, const RunOptions& opt);

std::filesystem::path cmd_train(const ExperimentConfig& c, const RunOptions& opt);
toydiff::DenoiserModel load_model(const ExperimentConfig& c, const RunOptions& opt);

std::filesystem::path cmd_immunize(const ExperimentConfig& c, const RunOptions& opt);
/// x0 + delta for one method and test image, read from the stored delta.
diffcore::Tensor load_immunized(const ExperimentConfig& c, const RunOptions& opt, attack::Method m,
                                const toydiff::DatasetItem& item);

std::filesystem::path cmd_evaluate(const ExperimentConfig& c, const RunOptions& opt);
std::filesystem::path cmd_ablate(const ExperimentConfig& c, const RunOptions& opt);
std::filesystem::path cmd_report(const ExperimentConfig& c, const RunOptions& opt);

/// gen-data, train, immunize, evaluate in order.
void run_pipeline(const ExperimentConfig& c, const RunOptions& opt);

/// Runs fn(0..count-1) on up to `jobs` threads. The first exception is
/// rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace danp::harness
