#include "danp/toydiff/train.hpp"

#include <cmath>
#include <string>

#include "danp/error.hpp"
#include "danp/rng.hpp"

namespace danp::toydiff {

using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"seed", c.seed},
                     {"holdout_draws", c.holdout_draws},
                     {"holdout_threshold", c.holdout_threshold},
                     {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
  c.holdout_draws = j.value("holdout_draws", d.holdout_draws);
  c.holdout_threshold = j.value("holdout_threshold", d.holdout_threshold);
  c.log_every = j.value("log_every", d.log_every);
}

namespace {

Var loss_on_tape(const DenoiserModel& model, Tape& tape, const std::vector<Var>* params, const DatasetItem& item,
                 std::size_t t, const Tensor& eps) {
  Tensor x_t = forward_diffuse(model.schedule(), item.image, t, eps);
  auto out = predict_noise(model, tape.constant(std::move(x_t)), t, item.caption, false, params);
  Var target = tape.constant(eps);
  return diffcore::scale(diffcore::l2_sq_distance(out.eps, target), 1.0 / static_cast<double>(eps.numel()));
}

}  // namespace

double denoising_loss(const DenoiserModel& model, const DatasetItem& item, std::size_t t, const Tensor& eps) {
  Tape tape;
  return loss_on_tape(model, tape, nullptr, item, t, eps).value().item();
}

double holdout_loss(const DenoiserModel& model, const std::vector<DatasetItem>& items, std::size_t draws,
                    std::uint64_t seed) {
  if (items.empty()) return 0.0;
  Rng rng(derive_seed(seed, {0x401d}));
  std::uniform_int_distribution<std::size_t> tdist(0, model.schedule().steps() - 1);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& item : items) {
    for (std::size_t k = 0; k < draws; ++k) {
      const std::size_t t = tdist(rng);
      const Tensor eps = normal_tensor(item.image.shape(), rng);
      total += denoising_loss(model, item, t, eps);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

TrainResult train(DenoiserModel& model, const std::vector<DatasetItem>& train_items,
                  const std::vector<DatasetItem>& holdout_items, const TrainConfig& config,
                  const std::function<void(const LossPoint&)>& on_log) {
  if (train_items.empty()) throw ContractError("train: dataset is empty");
  if (config.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(config.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");

  TrainResult result;
  const std::uint64_t eval_seed = derive_seed(config.seed, {0xe7a1});
  result.initial_holdout_loss = holdout_loss(model, holdout_items, config.holdout_draws, eval_seed);

  auto& params = model.params();
  std::vector<std::vector<double>> m(params.size()), v(params.size()), g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].numel(), 0.0);
    v[i].assign(params[i].numel(), 0.0);
    g[i].assign(params[i].numel(), 0.0);
  }

  Rng rng(derive_seed(config.seed, {0x7a1e}));
  std::uniform_int_distribution<std::size_t> item_dist(0, train_items.size() - 1);
  std::uniform_int_distribution<std::size_t> tdist(0, model.schedule().steps() - 1);
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  const std::size_t step0 = model.training_steps();

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& gi : g) std::fill(gi.begin(), gi.end(), 0.0);
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto& item = train_items[item_dist(rng)];
      const std::size_t t = tdist(rng);
      const Tensor eps = normal_tensor(item.image.shape(), rng);
      Tape tape;
      const auto vars = bind_params(model, tape, true);
      Var loss = loss_on_tape(model, tape, &vars, item, t, eps);
      batch_loss += loss.value().item();
      const auto grads = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& gv = grads.of(vars[i]);
        for (std::size_t k = 0; k < gv.numel(); ++k) g[i][k] += gv[k];
      }
    }
    batch_loss *= inv_batch;
    if (!std::isfinite(batch_loss)) {
      throw NumericError("training diverged at step " + std::to_string(step) + " (loss is not finite)");
    }

    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step0 + step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step0 + step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto data = params[i].data();
      for (std::size_t k = 0; k < data.size(); ++k) {
        const double grad = g[i][k] * inv_batch;
        m[i][k] = config.beta1 * m[i][k] + (1.0 - config.beta1) * grad;
        v[i][k] = config.beta2 * v[i][k] + (1.0 - config.beta2) * grad * grad;
        const double update = config.learning_rate * (m[i][k] / bc1) / (std::sqrt(v[i][k] / bc2) + config.adam_eps);
        data[k] = static_cast<float>(data[k] - update);
      }
    }
    model.set_training_steps(step0 + step);

    if (config.log_every && (step % config.log_every == 0 || step == 1 || step == config.steps)) {
      result.curve.push_back({step0 + step, batch_loss});
      if (on_log) on_log(result.curve.back());
    }
  }

  result.final_holdout_loss = holdout_loss(model, holdout_items, config.holdout_draws, eval_seed);
  if (!std::isfinite(result.final_holdout_loss)) throw NumericError("held-out loss is not finite after training");
  result.passed_threshold = result.final_holdout_loss < config.holdout_threshold;
  return result;
}

}  // namespace danp::toydiff
