#include <cstdio>
#include <fstream>
#include <set>

#include "danp/error.hpp"
#include "danp/harness/experiment.hpp"
#include "danp/rng.hpp"

namespace danp::harness {

namespace {

constexpr std::pair<PromptPolicy, std::string_view> kPolicies[] = {
    {PromptPolicy::kOriginal, "original"},
    {PromptPolicy::kUnseen, "unseen"},
    {PromptPolicy::kAll, "all"},
};

template <typename T>
T get_or(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!k.count(key)) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

}  // namespace

std::string_view policy_name(PromptPolicy p) {
  for (const auto& [v, n] : kPolicies) {
    if (v == p) return n;
  }
  throw ContractError("unknown prompt policy");
}

PromptPolicy parse_policy(std::string_view s) {
  for (const auto& [v, n] : kPolicies) {
    if (n == s) return v;
  }
  throw ConfigError("unknown prompt policy '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const {
  if (data.train_count == 0 || data.test_count == 0) throw ConfigError("data: counts must be >= 1");
  if (data.image_size < 8 || data.image_size % 4 != 0) throw ConfigError("data: image_size must be a multiple of 4, >= 8");
  if (model.image_size != data.image_size) throw ConfigError("model.image_size must equal data.image_size");
  if (train.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  attack.validate(model.timesteps);
  if (edit.t_edit >= model.timesteps) throw ConfigError("edit: t_edit must be < T");
  if (methods.empty()) throw ConfigError("methods: at least one method is required");
  if (ablation.bins.empty()) throw ConfigError("ablation: bins must not be empty");
  for (auto b : ablation.bins) {
    if (b < 2) throw ConfigError("ablation: bins must be >= 2");
  }
  if (ablation.timing_repeats == 0) throw ConfigError("ablation: timing_repeats must be >= 1");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(attack::method_name(m));
  return nlohmann::json{
      {"seed", c.seed},
      {"data", {{"train_count", c.data.train_count}, {"test_count", c.data.test_count}, {"image_size", c.data.image_size}}},
      {"model", c.model},
      {"train", c.train},
      {"attack", c.attack},
      {"edit", {{"t_edit", c.edit.t_edit}, {"policy", policy_name(c.edit.policy)}}},
      {"methods", methods},
      {"ablation",
       {{"images", c.ablation.images},
        {"iterations", c.ablation.iterations},
        {"bins", c.ablation.bins},
        {"timing_repeats", c.ablation.timing_repeats}}},
  };
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed", "data", "model", "train", "attack", "edit", "methods", "ablation"}, "config");
  ExperimentConfig c;
  try {
    c.seed = get_or(j, "seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"train_count", "test_count", "image_size"}, "data");
      c.data.train_count = get_or(d, "train_count", c.data.train_count);
      c.data.test_count = get_or(d, "test_count", c.data.test_count);
      c.data.image_size = get_or(d, "image_size", c.data.image_size);
    }
    c.model.image_size = c.data.image_size;
    if (j.contains("model")) {
      c.model = j["model"].get<toydiff::ModelConfig>();
      if (!j["model"].contains("image_size")) c.model.image_size = c.data.image_size;
    }
    if (j.contains("train")) c.train = j["train"].get<toydiff::TrainConfig>();
    if (j.contains("attack")) c.attack = j["attack"].get<attack::AttackConfig>();
    if (j.contains("edit")) {
      const auto& e = j["edit"];
      reject_unknown(e, {"t_edit", "policy"}, "edit");
      c.edit.t_edit = get_or(e, "t_edit", c.edit.t_edit);
      c.edit.policy = parse_policy(get_or<std::string>(e, "policy", std::string(policy_name(c.edit.policy))));
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(attack::parse_method(m.get<std::string>()));
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      reject_unknown(a, {"images", "iterations", "bins", "timing_repeats"}, "ablation");
      c.ablation.images = get_or(a, "images", c.ablation.images);
      c.ablation.iterations = get_or(a, "iterations", c.ablation.iterations);
      c.ablation.bins = get_or(a, "bins", c.ablation.bins);
      c.ablation.timing_repeats = get_or(a, "timing_repeats", c.ablation.timing_repeats);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string content_hash(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return std::string(buf, 12);
}

namespace {

nlohmann::json data_section(const ExperimentConfig& c) { return {{"seed", c.seed}, {"data", to_json(c)["data"]}}; }

nlohmann::json model_section(const ExperimentConfig& c) {
  return {{"data", data_section(c)}, {"model", c.model}, {"train", c.train}};
}

nlohmann::json immunize_section(const ExperimentConfig& c) {
  return {{"model", model_section(c)}, {"attack", c.attack}};
}

nlohmann::json evaluate_section(const ExperimentConfig& c) {
  const auto full = to_json(c);
  return {{"immunize", immunize_section(c)}, {"edit", full["edit"]}, {"methods", full["methods"]}};
}

nlohmann::json ablate_section(const ExperimentConfig& c) {
  return {{"model", model_section(c)}, {"attack", c.attack}, {"ablation", to_json(c)["ablation"]}};
}

}  // namespace

StagePaths stage_paths(const ExperimentConfig& c, const std::filesystem::path& root) {
  StagePaths p;
  p.root = root;
  p.data = root / ("data-" + content_hash(data_section(c)));
  p.model = root / ("model-" + content_hash(model_section(c)));
  p.immunize = root / ("immunize-" + content_hash(immunize_section(c)));
  p.evaluate = root / ("evaluate-" + content_hash(evaluate_section(c)));
  p.ablate = root / ("ablate-" + content_hash(ablate_section(c)));
  p.report =
      root / ("report-" + content_hash({{"evaluate", evaluate_section(c)}, {"ablate", ablate_section(c)}}));
  p.config_hash = content_hash(to_json(c));
  return p;
}

std::uint64_t image_attack_seed(const ExperimentConfig& c, std::size_t image_index) {
  return derive_seed(c.seed, {0xa77ac, c.attack.seed, image_index});
}

std::uint64_t edit_seed(const ExperimentConfig& c, std::size_t image_index, std::size_t prompt_index) {
  return derive_seed(c.seed, {0xed17, image_index, prompt_index});
}

std::vector<toydiff::Prompt> edit_prompts(const ExperimentConfig& c, const toydiff::DatasetItem& item,
                                          std::size_t image_index) {
  std::vector<toydiff::Prompt> out;
  if (c.edit.policy != PromptPolicy::kUnseen) out.push_back(item.caption);
  if (c.edit.policy != PromptPolicy::kOriginal) {
    auto extra = toydiff::unseen_prompts(item, derive_seed(c.seed, {0x5ee, image_index}));
    out.insert(out.end(), extra.begin(), extra.end());
  }
  return out;
}

}  // namespace danp::harness
