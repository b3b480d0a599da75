#include "danp/attack/danp.hpp"

#include <algorithm>
#include <cmath>

#include "danp/error.hpp"
#include "danp/rng.hpp"
#include "danp/toydiff/schedule.hpp"

namespace danp::attack {

using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;
namespace ops = diffcore;

namespace {

struct MethodInfo {
  Method method;
  std::string_view name;
  std::string_view slug;
};

constexpr MethodInfo kMethods[] = {
    {Method::kNone, "none", "none"},
    {Method::kRandomNoise, "random-noise", "random-noise"},
    {Method::kSaStyle, "sa-style", "sa-style"},
    {Method::kDanp, "danp", "danp"},
    {Method::kWoDaa, "w/o-daa", "wo-daa"},
    {Method::kWoNba, "w/o-nba", "wo-nba"},
};

const MethodInfo& info(Method m) {
  for (const auto& i : kMethods) {
    if (i.method == m) return i;
  }
  throw ContractError("unknown method");
}

float sign_of(double g) { return g > 0.0 ? 1.0f : (g < 0.0 ? -1.0f : 0.0f); }

}  // namespace

std::string_view method_name(Method m) { return info(m).name; }
std::string method_slug(Method m) { return std::string(info(m).slug); }

Method parse_method(std::string_view name) {
  for (const auto& i : kMethods) {
    if (name == i.name || name == i.slug) return i.method;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::kNone,  Method::kRandomNoise, Method::kSaStyle,
                                              Method::kDanp,  Method::kWoDaa,       Method::kWoNba};
  return methods;
}

bool is_budgeted(Method m) { return m != Method::kNone; }

std::vector<std::size_t> AttackConfig::resolved_timesteps(std::size_t steps) const {
  if (!timesteps.empty()) return timesteps;
  if (steps < 2) throw ConfigError("attack: model must have at least 2 timesteps");
  const std::size_t hi = steps - 1;
  const std::size_t k = std::min(timestep_count, hi);
  std::vector<std::size_t> out;
  if (k == 1) return {1};
  for (std::size_t i = 0; i < k; ++i) {
    const double v = 1.0 + static_cast<double>(i) * static_cast<double>(hi - 1) / static_cast<double>(k - 1);
    out.push_back(static_cast<std::size_t>(std::llround(v)));
  }
  return out;
}

void AttackConfig::validate(std::size_t steps) const {
  if (!(gamma > 0.0) || !(gamma < 1.0)) throw ConfigError("attack: gamma must lie in (0, 1)");
  if (!(alpha_step > 0.0) || alpha_step > gamma) throw ConfigError("attack: alpha_step must lie in (0, gamma]");
  if (timesteps.empty() && timestep_count == 0) throw ConfigError("attack: timestep_count must be >= 1");
  if (bins < 2) throw ConfigError("attack: bins must be >= 2");
  if (!std::isfinite(lambda_daa) || !std::isfinite(lambda_nba) || lambda_daa < 0.0 || lambda_nba < 0.0) {
    throw ConfigError("attack: lambda weights must be finite and >= 0");
  }
  const auto ts = resolved_timesteps(steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] < 1 || ts[i] >= steps) throw ConfigError("attack: timesteps must lie in [1, T-1]");
    for (std::size_t j = 0; j < i; ++j) {
      if (ts[i] == ts[j]) throw ConfigError("attack: timesteps must be distinct");
    }
  }
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"alpha_step", c.alpha_step},
                     {"iterations", c.iterations},
                     {"timestep_count", c.timestep_count},
                     {"timesteps", c.timesteps},
                     {"lambda_daa", c.lambda_daa},
                     {"lambda_nba", c.lambda_nba},
                     {"bins", c.bins},
                     {"sa_threshold", c.sa_threshold},
                     {"seed", c.seed},
                     {"keep_masks", c.keep_masks}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  const AttackConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.alpha_step = j.value("alpha_step", d.alpha_step);
  c.iterations = j.value("iterations", d.iterations);
  c.timestep_count = j.value("timestep_count", d.timestep_count);
  c.timesteps = j.value("timesteps", d.timesteps);
  c.lambda_daa = j.value("lambda_daa", d.lambda_daa);
  c.lambda_nba = j.value("lambda_nba", d.lambda_nba);
  c.bins = j.value("bins", d.bins);
  c.sa_threshold = j.value("sa_threshold", d.sa_threshold);
  c.seed = j.value("seed", d.seed);
  c.keep_masks = j.value("keep_masks", d.keep_masks);
}

nlohmann::json method_config_json(const AttackConfig& c, Method m) {
  nlohmann::json j = c;
  switch (m) {
    case Method::kNone:
      return nlohmann::json::object();
    case Method::kRandomNoise:
      return nlohmann::json{{"gamma", c.gamma}, {"seed", c.seed}};
    case Method::kSaStyle:
      j.erase("lambda_daa");
      j.erase("lambda_nba");
      j.erase("bins");
      break;
    case Method::kDanp:
      j.erase("sa_threshold");
      break;
    case Method::kWoDaa:
      j.erase("lambda_daa");
      j.erase("bins");
      j.erase("sa_threshold");
      break;
    case Method::kWoNba:
      j["lambda_nba"] = 0.0;
      j.erase("sa_threshold");
      break;
  }
  return j;
}

LossTerms LossTerms::for_method(Method m, const AttackConfig& c) {
  LossTerms t;
  t.lambda_daa = c.lambda_daa;
  t.lambda_nba = c.lambda_nba;
  t.bins = c.bins;
  switch (m) {
    case Method::kNone:
    case Method::kRandomNoise:
      t.use_daa = false;
      t.lambda_nba = 0.0;
      break;
    case Method::kSaStyle:
      t.suppression_only = true;
      t.fixed_threshold = c.sa_threshold;
      t.lambda_nba = 0.0;
      break;
    case Method::kDanp:
      break;
    case Method::kWoDaa:
      t.use_daa = false;
      break;
    case Method::kWoNba:
      t.lambda_nba = 0.0;
      break;
  }
  return t;
}

Var daa_loss(Var att, const Tensor& mask, double lambda_daa) {
  if (att.shape() != mask.shape()) {
    throw ShapeError("daa_loss", diffcore::shape_string(att.shape()), diffcore::shape_string(mask.shape()));
  }
  Tape& tape = att.tape();
  Tensor inv(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) inv[i] = 1.0f - mask[i];
  Var m = ops::stop_gradient(tape.constant(mask));
  Var im = ops::stop_gradient(tape.constant(std::move(inv)));
  Var inside = ops::frobenius_sq(ops::mul(att, m));
  Var outside = ops::frobenius_sq(ops::mul(att, im));
  return ops::sub(inside, ops::scale(outside, lambda_daa));
}

Var suppression_loss(Var att, const Tensor& mask) {
  if (att.shape() != mask.shape()) {
    throw ShapeError("suppression_loss", diffcore::shape_string(att.shape()), diffcore::shape_string(mask.shape()));
  }
  Var m = ops::stop_gradient(att.tape().constant(mask));
  return ops::frobenius_sq(ops::mul(att, m));
}

Var nba_loss(Var eps_clean, Var eps_imu) {
  if (eps_clean.shape() != eps_imu.shape()) {
    throw ShapeError("nba_loss", diffcore::shape_string(eps_clean.shape()), diffcore::shape_string(eps_imu.shape()));
  }
  return ops::scale(ops::l2_sq_distance(eps_clean, eps_imu), -1.0);
}

LossValue total_loss(const Tensor& x0, const Tensor& delta, const toydiff::DenoiserModel& model,
                     const toydiff::Prompt& prompt, std::size_t t, const Tensor& shared_eps, const LossTerms& terms,
                     bool want_grad, const Tensor* mask_override) {
  if (x0.shape() != delta.shape() || x0.shape() != shared_eps.shape()) {
    throw ShapeError("total_loss", diffcore::shape_string(x0.shape()), diffcore::shape_string(delta.shape()));
  }
  const auto& schedule = model.schedule();
  LossValue out;

  Tensor x_imu_value(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) x_imu_value[i] = x0[i] + delta[i];

  Tape tape;
  Var x_imu = tape.leaf(std::move(x_imu_value), want_grad);
  Var xt_imu = toydiff::forward_diffuse(schedule, x_imu, t, shared_eps);
  auto fwd = toydiff::predict_noise(model, xt_imu, t, prompt, terms.use_daa);

  std::vector<Var> parts;
  if (terms.use_daa) {
    const auto& rec = *fwd.attention;
    const auto agg = attnmask::aggregate(rec, prompt);
    attnmask::BinaryMask mask;
    if (mask_override) {
      if (mask_override->shape() != diffcore::Shape{agg.height, agg.width}) {
        throw ShapeError("total_loss mask", diffcore::shape_string(mask_override->shape()),
                         diffcore::shape_string({agg.height, agg.width}));
      }
      mask.height = agg.height;
      mask.width = agg.width;
      mask.timestep = t;
      mask.mask.resize(mask_override->numel());
      for (std::size_t i = 0; i < mask.mask.size(); ++i) mask.mask[i] = (*mask_override)[i] != 0.0f ? 1 : 0;
    } else if (terms.fixed_threshold > 0.0) {
      mask = attnmask::fixed_threshold_mask(agg, terms.fixed_threshold, t);
    } else {
      mask = attnmask::make_mask(agg, terms.bins, t);
    }
    if (!mask.degenerate) {
      Var att = attnmask::aggregate_var(rec, prompt);
      Var daa = terms.suppression_only ? suppression_loss(att, mask.as_tensor())
                                       : daa_loss(att, mask.as_tensor(), terms.lambda_daa);
      Var balanced = ops::scale(daa, 1.0 / static_cast<double>(mask.mask.size()));
      out.daa_raw = daa.value().item();
      out.daa = balanced.value().item();
      parts.push_back(balanced);
    }
    out.mask = std::move(mask);
  }

  if (terms.lambda_nba != 0.0) {
    const Tensor xt_clean = toydiff::forward_diffuse(schedule, x0, t, shared_eps);
    Tensor eps_clean = toydiff::predict_noise(model, xt_clean, t, prompt);
    Var raw = nba_loss(tape.constant(std::move(eps_clean)), fwd.eps);
    Var balanced = ops::scale(raw, 1.0 / static_cast<double>(x0.numel()));
    out.nba_raw = raw.value().item();
    out.nba = balanced.value().item();
    parts.push_back(ops::scale(balanced, terms.lambda_nba));
  }

  if (parts.empty()) {
    out.total = 0.0;
    if (want_grad) out.grad = Tensor(x0.shape(), 0.0f);
    return out;
  }
  Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = ops::add(total, parts[i]);
  out.total = total.value().item();
  if (want_grad) {
    const auto grads = tape.backward(total);
    out.grad = grads.of(x_imu);
  }
  return out;
}

double PerturbationState::linf() const {
  double m = 0.0;
  for (std::size_t i = 0; i < delta.numel(); ++i) m = std::max(m, static_cast<double>(std::fabs(delta[i])));
  return m;
}

void project(Tensor& delta, const Tensor& x0, double gamma) {
  if (delta.shape() != x0.shape()) {
    throw ShapeError("project", diffcore::shape_string(delta.shape()), diffcore::shape_string(x0.shape()));
  }
  const float g = static_cast<float>(gamma);
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    float d = std::clamp(delta[i], -g, g);
    if (x0[i] + d > 1.0f) {
      d = 1.0f - x0[i];
      while (x0[i] + d > 1.0f) d = std::nextafter(d, -1.0f);
    } else if (x0[i] + d < 0.0f) {
      d = -x0[i];
      while (x0[i] + d < 0.0f) d = std::nextafter(d, 1.0f);
    }
    delta[i] = d;
  }
}

namespace {

ImmunizeResult finish(const Tensor& x0, PerturbationState state) {
  Tensor x_imu(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) x_imu[i] = x0[i] + state.delta[i];
  return {std::move(x_imu), std::move(state)};
}

}  // namespace

ImmunizeResult immunize(const Tensor& x0, const toydiff::Prompt& prompt, const toydiff::DenoiserModel& model,
                        const AttackConfig& cfg, Method method) {
  if (method == Method::kNone || method == Method::kRandomNoise) return run_method(x0, prompt, model, cfg, method);
  if (x0.shape() != model.image_shape()) {
    throw ShapeError("immunize", diffcore::shape_string(x0.shape()), diffcore::shape_string(model.image_shape()));
  }
  cfg.validate(model.schedule().steps());
  const auto ts = cfg.resolved_timesteps(model.schedule().steps());
  const LossTerms terms = LossTerms::for_method(method, cfg);
  const double inv_ts = 1.0 / static_cast<double>(ts.size());

  PerturbationState state;
  state.delta = Tensor(x0.shape(), 0.0f);
  std::vector<double> g(x0.numel());

  for (std::size_t n = 0; n < cfg.iterations; ++n) {
    std::fill(g.begin(), g.end(), 0.0);
    IterationTrace tr;
    tr.iteration = n + 1;
    bool all_degenerate = terms.use_daa;
    for (std::size_t t : ts) {
      Rng rng(derive_seed(cfg.seed, {n, t}));
      const Tensor eps = normal_tensor(x0.shape(), rng);
      LossValue lv = total_loss(x0, state.delta, model, prompt, t, eps, terms, true);
      const Tensor& gi = *lv.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
      tr.daa += lv.daa * inv_ts;
      tr.nba += lv.nba * inv_ts;
      tr.total += lv.total * inv_ts;
      if (lv.mask) {
        const auto& m = *lv.mask;
        if (!m.degenerate) all_degenerate = false;
        MaskInfo mi{t, m.threshold, m.ones(), m.checksum(), m.degenerate, {}};
        if (cfg.keep_masks) mi.mask = m.mask;
        tr.masks.push_back(std::move(mi));
      }
    }
    if (all_degenerate) ++state.degenerate_iterations;

    const float alpha = static_cast<float>(cfg.alpha_step);
    for (std::size_t i = 0; i < g.size(); ++i) state.delta[i] -= alpha * sign_of(g[i] * inv_ts);
    project(state.delta, x0, cfg.gamma);
    if (!state.delta.all_finite()) throw NumericError("immunize: perturbation became non-finite");

    state.iteration = n + 1;
    state.trace.push_back(std::move(tr));
  }

  if (cfg.iterations > 0 && 2 * state.degenerate_iterations > cfg.iterations) {
    state.warnings.push_back("attention mask degenerate at every timestep for " +
                             std::to_string(state.degenerate_iterations) + " of " + std::to_string(cfg.iterations) +
                             " iterations; attack relied on the noise term");
  }
  return finish(x0, std::move(state));
}

ImmunizeResult random_noise(const Tensor& x0, const AttackConfig& cfg) {
  if (!(cfg.gamma > 0.0) || !(cfg.gamma < 1.0)) throw ConfigError("attack: gamma must lie in (0, 1)");
  PerturbationState state;
  state.delta = Tensor(x0.shape(), 0.0f);
  Rng rng(derive_seed(cfg.seed, {0x5a11}));
  std::bernoulli_distribution coin(0.5);
  const float g = static_cast<float>(cfg.gamma);
  for (std::size_t i = 0; i < x0.numel(); ++i) state.delta[i] = coin(rng) ? g : -g;
  project(state.delta, x0, cfg.gamma);
  return finish(x0, std::move(state));
}

ImmunizeResult run_method(const Tensor& x0, const toydiff::Prompt& prompt, const toydiff::DenoiserModel& model,
                          const AttackConfig& cfg, Method method) {
  switch (method) {
    case Method::kNone: {
      PerturbationState state;
      state.delta = Tensor(x0.shape(), 0.0f);
      return finish(x0, std::move(state));
    }
    case Method::kRandomNoise:
      return random_noise(x0, cfg);
    default:
      return immunize(x0, prompt, model, cfg, method);
  }
}

nlohmann::json attack_report(const ImmunizeResult& r, const AttackConfig& cfg, Method method) {
  nlohmann::json terms = nlohmann::json::array();
  const LossTerms lt = LossTerms::for_method(method, cfg);
  if (lt.use_daa) {
    terms.push_back("suppress");
    if (!lt.suppression_only) terms.push_back("amplify");
  }
  if (lt.lambda_nba != 0.0) terms.push_back("nba");

  nlohmann::json iters = nlohmann::json::array();
  for (const auto& tr : r.state.trace) {
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : tr.masks) {
      nlohmann::json mj{{"timestep", m.timestep},
                        {"threshold", m.threshold},
                        {"ones", m.ones},
                        {"checksum", m.checksum},
                        {"degenerate", m.degenerate}};
      if (!m.mask.empty()) mj["mask"] = m.mask;
      masks.push_back(std::move(mj));
    }
    iters.push_back({{"iteration", tr.iteration},
                     {"daa", tr.daa},
                     {"nba", tr.nba},
                     {"total", tr.total},
                     {"masks", std::move(masks)}});
  }
  return nlohmann::json{{"method", method_name(method)},
                        {"config", method_config_json(cfg, method)},
                        {"loss_terms", std::move(terms)},
                        {"balancing", "daa / pixels, nba / noise elements"},
                        {"iterations", std::move(iters)},
                        {"degenerate_iterations", r.state.degenerate_iterations},
                        {"warnings", r.state.warnings},
                        {"final_linf", r.state.linf()}};
}

}  // namespace danp::attack
