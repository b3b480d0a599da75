#include "danp/toydiff/model.hpp"

#include <cmath>

#include "danp/error.hpp"
#include "danp/io/blob.hpp"
#include "danp/rng.hpp"

namespace danp::toydiff {

using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;
namespace ops = diffcore;

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"width_full", c.width_full},
                     {"width_half", c.width_half},   {"width_quarter", c.width_quarter},
                     {"text_dim", c.text_dim},       {"key_dim", c.key_dim},
                     {"time_dim", c.time_dim},       {"time_freqs", c.time_freqs},
                     {"timesteps", c.timesteps},     {"beta_min", c.beta_min},
                     {"beta_max", c.beta_max},       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.width_full = j.value("width_full", d.width_full);
  c.width_half = j.value("width_half", d.width_half);
  c.width_quarter = j.value("width_quarter", d.width_quarter);
  c.text_dim = j.value("text_dim", d.text_dim);
  c.key_dim = j.value("key_dim", d.key_dim);
  c.time_dim = j.value("time_dim", d.time_dim);
  c.time_freqs = j.value("time_freqs", d.time_freqs);
  c.timesteps = j.value("timesteps", d.timesteps);
  c.beta_min = j.value("beta_min", d.beta_min);
  c.beta_max = j.value("beta_max", d.beta_max);
  c.init_seed = j.value("init_seed", d.init_seed);
}

namespace {

std::vector<Shape> param_shapes(const ModelConfig& c) {
  const std::size_t f = c.width_full, h = c.width_half, q = c.width_quarter;
  const std::size_t d = c.text_dim, k = c.key_dim, te = c.time_dim;
  std::vector<Shape> s(static_cast<std::size_t>(Param::kCount));
  auto set = [&](Param p, Shape shape) { s[static_cast<std::size_t>(p)] = std::move(shape); };
  set(Param::kTokenTable, {kVocabSize, d});
  set(Param::kPositionTable, {kMaxTokens, d});
  set(Param::kTimeW, {2 * c.time_freqs, te});
  set(Param::kTimeB, {te});
  set(Param::kEnc0W, {3, f});
  set(Param::kEnc0B, {f});
  set(Param::kEnc0T, {te, f});
  set(Param::kEnc1W, {f, h});
  set(Param::kEnc1B, {h});
  set(Param::kEnc1T, {te, h});
  set(Param::kAttn1Q, {h, k});
  set(Param::kAttn1K, {d, k});
  set(Param::kAttn1V, {d, h});
  set(Param::kAttn1O, {h, h});
  set(Param::kEnc2W, {h, q});
  set(Param::kEnc2B, {q});
  set(Param::kEnc2T, {te, q});
  set(Param::kAttn2Q, {q, k});
  set(Param::kAttn2K, {d, k});
  set(Param::kAttn2V, {d, q});
  set(Param::kAttn2O, {q, q});
  set(Param::kMidW, {q, q});
  set(Param::kMidB, {q});
  set(Param::kMidT, {te, q});
  set(Param::kDec1W, {q + h, h});
  set(Param::kDec1B, {h});
  set(Param::kDec1T, {te, h});
  set(Param::kDec0W, {h + f, f});
  set(Param::kDec0B, {f});
  set(Param::kDec0T, {te, f});
  set(Param::kOutW, {f, 3});
  set(Param::kOutB, {3});
  return s;
}

void validate(const ModelConfig& c) {
  if (c.image_size < 8 || c.image_size % 4 != 0) throw ConfigError("model image_size must be a multiple of 4, >= 8");
  if (!c.width_full || !c.width_half || !c.width_quarter || !c.text_dim || !c.key_dim || !c.time_dim || !c.time_freqs) {
    throw ConfigError("model widths must be positive");
  }
}

Tensor time_features(const ModelConfig& c, std::size_t t) {
  Tensor out({1, 2 * c.time_freqs});
  for (std::size_t i = 0; i < c.time_freqs; ++i) {
    const double freq = std::exp(-std::log(100.0) * static_cast<double>(i) / static_cast<double>(c.time_freqs));
    out[i] = static_cast<float>(std::sin(static_cast<double>(t) * freq));
    out[c.time_freqs + i] = static_cast<float>(std::cos(static_cast<double>(t) * freq));
  }
  return out;
}

// Dense layer over rows, plus a time-embedding projection broadcast over rows.
Var dense_t(Var x, Var w, Var b, Var temb, Var wt) {
  Var tproj = ops::reshape(ops::matmul(temb, wt), {wt.shape()[1]});
  return ops::add(ops::add(ops::matmul(x, w), b), tproj);
}

struct AttentionOut {
  Var out;
  Var probs;
};

AttentionOut cross_attention(Var h, Var text, Var wq, Var wk, Var wv, Var wo) {
  Var q = ops::matmul(h, wq);
  Var k = ops::matmul(text, wk);
  Var v = ops::matmul(text, wv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(wq.shape()[1]));
  Var probs = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dk), 1);
  return {ops::matmul(ops::matmul(probs, v), wo), probs};
}

}  // namespace

const std::vector<std::string>& DenoiserModel::param_names() {
  static const std::vector<std::string> names = {
      "token_table", "position_table", "time_w",  "time_b",  "enc0_w",  "enc0_b",  "enc0_t",  "enc1_w",
      "enc1_b",      "enc1_t",         "attn1_q", "attn1_k", "attn1_v", "attn1_o", "enc2_w",  "enc2_b",
      "enc2_t",      "attn2_q",        "attn2_k", "attn2_v", "attn2_o", "mid_w",   "mid_b",   "mid_t",
      "dec1_w",      "dec1_b",         "dec1_t",  "dec0_w",  "dec0_b",  "dec0_t",  "out_w",   "out_b"};
  return names;
}

DenoiserModel::DenoiserModel(ModelConfig config)
    : config_(config), schedule_(build_schedule(config.timesteps, config.beta_min, config.beta_max)) {
  validate(config_);
  Rng rng(derive_seed(config_.init_seed, {0x1417}));
  const auto shapes = param_shapes(config_);
  params_.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Shape& s = shapes[i];
    const auto p = static_cast<Param>(i);
    if (s.size() == 1) {
      params_.emplace_back(s, 0.0f);
      continue;
    }
    double std = 1.0 / std::sqrt(static_cast<double>(s[0]));
    if (p == Param::kTokenTable || p == Param::kPositionTable) std = 1.0;
    if (p == Param::kOutW) std *= 0.1;
    Tensor t = normal_tensor(s, rng);
    for (auto& v : t.data()) v = static_cast<float>(v * std);
    params_.push_back(std::move(t));
  }
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "danp-toydiff-model";
  header["version"] = 1;
  header["config"] = config_;
  header["training_steps"] = training_steps_;
  header["schedule"] = {{"beta", schedule_.beta}, {"alpha_bar", schedule_.alpha_bar}, {"sigma", schedule_.sigma}};
  auto& tensors = header["tensors"] = nlohmann::json::array();
  std::vector<float> payload;
  payload.reserve(parameter_count());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    tensors.push_back({{"name", param_names()[i]}, {"shape", params_[i].shape()}});
    payload.insert(payload.end(), params_[i].data().begin(), params_[i].data().end());
  }
  io::write_blob(path, header, payload);
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  io::Blob blob = io::read_blob(path);
  if (blob.header.value("format", "") != "danp-toydiff-model") throw IoError("not a model file: " + path.string());
  DenoiserModel model(blob.header.at("config").get<ModelConfig>());
  model.training_steps_ = blob.header.value("training_steps", std::size_t{0});
  const auto& tensors = blob.header.at("tensors");
  if (tensors.size() != model.params_.size()) throw IoError("model tensor count mismatch in " + path.string());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    const auto shape = tensors[i].at("shape").get<Shape>();
    if (shape != model.params_[i].shape() || tensors[i].at("name") != param_names()[i]) {
      throw IoError("model tensor layout mismatch at " + param_names()[i]);
    }
    const std::size_t n = model.params_[i].numel();
    if (offset + n > blob.payload.size()) throw IoError("model payload truncated: " + path.string());
    std::copy_n(blob.payload.begin() + static_cast<std::ptrdiff_t>(offset), n, model.params_[i].data().begin());
    offset += n;
  }
  if (offset != blob.payload.size()) throw IoError("model payload has trailing data: " + path.string());
  return model;
}

std::vector<Var> bind_params(const DenoiserModel& model, Tape& tape, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(model.params().size());
  for (const auto& p : model.params()) vars.push_back(tape.leaf(p, requires_grad));
  return vars;
}

Tensor embed_prompt(const DenoiserModel& model, const Prompt& prompt) {
  const auto& table = model.param(Param::kTokenTable);
  const auto& pos = model.param(Param::kPositionTable);
  const std::size_t d = model.config().text_dim;
  Tensor out({kMaxTokens, d});
  for (std::size_t s = 0; s < kMaxTokens; ++s) {
    const auto id = static_cast<std::size_t>(prompt.token_ids.at(s));
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] = table[id * d + j] + pos[s * d + j];
  }
  return out;
}

ForwardResult predict_noise(const DenoiserModel& model, Var x_t, std::size_t t, const Prompt& prompt,
                            bool capture_attention, const std::vector<Var>* params) {
  const auto& c = model.config();
  if (x_t.shape() != model.image_shape()) {
    throw ShapeError("predict_noise", diffcore::shape_string(x_t.shape()), diffcore::shape_string(model.image_shape()));
  }
  if (t >= c.timesteps) throw ContractError("predict_noise: timestep out of range");
  if (prompt.token_ids.size() != kMaxTokens) throw ContractError("predict_noise: prompt must have kMaxTokens ids");

  Tape& tape = x_t.tape();
  std::vector<Var> local;
  if (!params) {
    local = bind_params(model, tape, false);
    params = &local;
  }
  auto P = [&](Param p) { return (*params)[static_cast<std::size_t>(p)]; };

  const std::size_t n = c.image_size, nh = n / 2, nq = n / 4;
  const std::size_t f = c.width_full, h = c.width_half, q = c.width_quarter;

  // Text: one-hot rows select from the token table; positions are added.
  Tensor onehot({kMaxTokens, kVocabSize});
  for (std::size_t s = 0; s < kMaxTokens; ++s) {
    const int id = prompt.token_ids[s];
    if (id < 0 || id >= static_cast<int>(kVocabSize)) throw ContractError("prompt token id out of vocabulary");
    onehot[s * kVocabSize + static_cast<std::size_t>(id)] = 1.0f;
  }
  Var text = ops::add(ops::matmul(tape.constant(std::move(onehot)), P(Param::kTokenTable)), P(Param::kPositionTable));

  Var temb = ops::silu(ops::add(ops::matmul(tape.constant(time_features(c, t)), P(Param::kTimeW)), P(Param::kTimeB)));

  Var x = ops::reshape(x_t, {n * n, 3});
  Var h0 = ops::silu(dense_t(x, P(Param::kEnc0W), P(Param::kEnc0B), temb, P(Param::kEnc0T)));

  Var p1 = ops::reshape(ops::avgpool2x(ops::reshape(h0, {n, n, f})), {nh * nh, f});
  Var h1 = ops::silu(dense_t(p1, P(Param::kEnc1W), P(Param::kEnc1B), temb, P(Param::kEnc1T)));
  auto a1 = cross_attention(h1, text, P(Param::kAttn1Q), P(Param::kAttn1K), P(Param::kAttn1V), P(Param::kAttn1O));
  h1 = ops::add(h1, a1.out);

  Var p2 = ops::reshape(ops::avgpool2x(ops::reshape(h1, {nh, nh, h})), {nq * nq, h});
  Var h2 = ops::silu(dense_t(p2, P(Param::kEnc2W), P(Param::kEnc2B), temb, P(Param::kEnc2T)));
  auto a2 = cross_attention(h2, text, P(Param::kAttn2Q), P(Param::kAttn2K), P(Param::kAttn2V), P(Param::kAttn2O));
  h2 = ops::add(h2, a2.out);

  Var mid = ops::silu(dense_t(h2, P(Param::kMidW), P(Param::kMidB), temb, P(Param::kMidT)));

  Var u1 = ops::reshape(ops::upsample2x(ops::reshape(mid, {nq, nq, q})), {nh * nh, q});
  Var d1 = ops::silu(dense_t(ops::concat({u1, h1}, 1), P(Param::kDec1W), P(Param::kDec1B), temb, P(Param::kDec1T)));

  Var u0 = ops::reshape(ops::upsample2x(ops::reshape(d1, {nh, nh, h})), {n * n, h});
  Var d0 = ops::silu(dense_t(ops::concat({u0, h0}, 1), P(Param::kDec0W), P(Param::kDec0B), temb, P(Param::kDec0T)));

  Var eps = ops::reshape(ops::add(ops::matmul(d0, P(Param::kOutW)), P(Param::kOutB)), {n, n, 3});

  ForwardResult result{eps, mid, std::nullopt};
  if (capture_attention) {
    attnmask::AttentionRecord rec;
    rec.tokens = kMaxTokens;
    rec.blocks.push_back({nh, nh, a1.probs});
    rec.blocks.push_back({nq, nq, a2.probs});
    result.attention = std::move(rec);
  }
  return result;
}

Tensor predict_noise(const DenoiserModel& model, const Tensor& x_t, std::size_t t, const Prompt& prompt) {
  Tape tape;
  Var x = tape.constant(x_t);
  return predict_noise(model, x, t, prompt, false).eps.value();
}

}  // namespace danp::toydiff
