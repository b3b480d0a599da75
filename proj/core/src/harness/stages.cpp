#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "danp/attnmask/mask.hpp"
#include "danp/error.hpp"
#include "danp/harness/experiment.hpp"
#include "danp/io/blob.hpp"
#include "danp/io/ppm.hpp"
#include "danp/rng.hpp"
#include "danp/toydiff/sampler.hpp"

namespace danp::harness {

namespace fs = std::filesystem;
using diffcore::Tensor;
using nlohmann::json;

namespace {

constexpr const char* kMarker = "stage.json";

void log(const RunOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError({path.string()});
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

bool done(const fs::path& dir) { return fs::exists(dir / kMarker); }

void mark_done(const fs::path& dir, const std::string& stage, const ExperimentConfig& c) {
  write_json(dir / kMarker, {{"stage", stage}, {"config_hash", stage_paths(c, dir.parent_path()).config_hash}});
}

void require(const std::vector<fs::path>& paths) {
  std::vector<std::string> missing;
  for (const auto& p : paths) {
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) throw MissingArtifactError(std::move(missing));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::uint64_t data_seed(const ExperimentConfig& c, std::uint64_t split) { return derive_seed(c.seed, {0xda7a, split}); }

toydiff::ModelConfig resolved_model(const ExperimentConfig& c) {
  toydiff::ModelConfig m = c.model;
  m.init_seed = derive_seed(c.seed, {0x30de1, c.model.init_seed});
  return m;
}

toydiff::TrainConfig resolved_train(const ExperimentConfig& c) {
  toydiff::TrainConfig t = c.train;
  t.seed = derive_seed(c.seed, {0x7a1, c.train.seed});
  return t;
}

std::size_t t_edit_of(const ExperimentConfig& c, const toydiff::DenoiserModel& model) {
  return c.edit.t_edit ? c.edit.t_edit : toydiff::default_edit_timestep(model);
}

json scene_json(const toydiff::Scene& s) {
  return {{"shape", toydiff::kShapeNames[static_cast<std::size_t>(s.shape)]},
          {"shape_color", s.shape_color},
          {"background_color", s.background_color},
          {"center_x", s.center_x},
          {"center_y", s.center_y},
          {"size", s.size}};
}

toydiff::Scene scene_from(const json& j) {
  toydiff::Scene s;
  const auto name = j.at("shape").get<std::string>();
  for (std::size_t k = 0; k < toydiff::kShapeNames.size(); ++k) {
    if (toydiff::kShapeNames[k] == name) s.shape = static_cast<toydiff::ShapeKind>(k);
  }
  s.shape_color = j.at("shape_color").get<std::size_t>();
  s.background_color = j.at("background_color").get<std::size_t>();
  s.center_x = j.at("center_x").get<double>();
  s.center_y = j.at("center_y").get<double>();
  s.size = j.at("size").get<double>();
  return s;
}

Tensor mask_image(const std::vector<std::uint8_t>& mask, std::size_t n) {
  Tensor t({n, n, 3});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) t[i * 3 + k] = mask[i] ? 1.0f : 0.0f;
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------- gen-data

fs::path cmd_gen_data(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  if (opt.reuse && done(paths.data)) {
    log(opt, "data: reusing " + paths.data.string());
    return paths.data;
  }
  fs::create_directories(paths.data / "images");
  fs::create_directories(paths.data / "masks");
  json manifest{{"image_size", c.data.image_size}, {"seed", c.seed}};
  const std::pair<const char*, std::size_t> splits[] = {{"train", c.data.train_count}, {"test", c.data.test_count}};
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto ds = toydiff::generate_dataset(data_seed(c, s), splits[s].second, c.data.image_size, splits[s].first);
    json items = json::array();
    for (const auto& it : ds.items) {
      const std::string img = "images/" + it.id + ".ppm", msk = "masks/" + it.id + ".ppm";
      io::write_ppm(paths.data / img, it.image);
      io::write_ppm(paths.data / msk, mask_image(it.shape_mask, c.data.image_size));
      const double coverage = static_cast<double>(std::count(it.shape_mask.begin(), it.shape_mask.end(), 1)) /
                              static_cast<double>(it.shape_mask.size());
      items.push_back({{"id", it.id},
                       {"image", img},
                       {"mask", msk},
                       {"tokens", it.caption.token_ids},
                       {"caption", it.caption.text()},
                       {"mask_coverage", coverage},
                       {"scene", scene_json(it.scene)}});
    }
    manifest[splits[s].first] = std::move(items);
  }
  write_json(paths.data / "manifest.json", manifest);
  write_json(paths.data / "config.json", to_json(c));
  mark_done(paths.data, "data", c);
  log(opt, "data: wrote " + paths.data.string());
  return paths.data;
}

LoadedData load_data(const ExperimentConfig& c, const RunOptions& opt) {
  const auto paths = stage_paths(c, opt.out);
  require({paths.data / kMarker, paths.data / "manifest.json"});
  const json manifest = read_json(paths.data / "manifest.json");
  LoadedData out;
  for (const char* split : {"train", "test"}) {
    std::vector<fs::path> files;
    for (const auto& e : manifest.at(split)) {
      files.push_back(paths.data / e.at("image").get<std::string>());
      files.push_back(paths.data / e.at("mask").get<std::string>());
    }
    require(files);
    auto& dst = std::string(split) == "train" ? out.train : out.test;
    for (const auto& e : manifest.at(split)) {
      toydiff::DatasetItem item;
      item.id = e.at("id").get<std::string>();
      item.image = io::read_ppm(paths.data / e.at("image").get<std::string>());
      const Tensor m = io::read_ppm(paths.data / e.at("mask").get<std::string>());
      item.shape_mask.resize(m.numel() / 3);
      for (std::size_t i = 0; i < item.shape_mask.size(); ++i) item.shape_mask[i] = m[i * 3] > 0.5f ? 1 : 0;
      std::vector<int> words;
      const auto tokens = e.at("tokens").get<std::vector<int>>();
      for (int t : tokens) {
        if (t != toydiff::kBosToken && t != toydiff::kPadToken) words.push_back(t);
      }
      item.caption = toydiff::from_token_ids(words);
      item.scene = scene_from(e.at("scene"));
      dst.push_back(std::move(item));
    }
  }
  return out;
}

// ---------------------------------------------------------------- train

fs::path cmd_train(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  if (opt.reuse && done(paths.model)) {
    log(opt, "train: reusing " + paths.model.string());
    return paths.model;
  }
  const auto data = load_data(c, opt);
  toydiff::DenoiserModel model(resolved_model(c));
  const auto tc = resolved_train(c);
  log(opt, "train: " + std::to_string(model.parameter_count()) + " parameters, " + std::to_string(tc.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = toydiff::train(model, data.train, data.test, tc, [&](const toydiff::LossPoint& p) {
    if (p.step % 100 == 0) log(opt, "train: step " + std::to_string(p.step) + " loss " + fmt(p.train_loss));
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(paths.model);
  model.save(paths.model / "model.bin");
  std::string csv = "step,train_loss\n";
  for (const auto& p : result.curve) csv += std::to_string(p.step) + "," + fmt(p.train_loss) + "\n";
  write_text(paths.model / "loss_curve.csv", csv);
  write_json(paths.model / "train_report.json", {{"steps", tc.steps},
                                                 {"parameter_count", model.parameter_count()},
                                                 {"initial_holdout_loss", result.initial_holdout_loss},
                                                 {"final_holdout_loss", result.final_holdout_loss},
                                                 {"holdout_threshold", tc.holdout_threshold},
                                                 {"passed_threshold", result.passed_threshold}});
  write_json(paths.model / "config.json", to_json(c));
  mark_done(paths.model, "model", c);
  log(opt, "train: held-out loss " + fmt(result.initial_holdout_loss) + " -> " + fmt(result.final_holdout_loss) +
               (result.passed_threshold ? " (below threshold)" : " (ABOVE threshold)") + " in " +
               fmt(seconds) + " s");
  return paths.model;
}

toydiff::DenoiserModel load_model(const ExperimentConfig& c, const RunOptions& opt) {
  const auto paths = stage_paths(c, opt.out);
  require({paths.model / kMarker, paths.model / "model.bin"});
  return toydiff::DenoiserModel::load(paths.model / "model.bin");
}

// ---------------------------------------------------------------- immunize

fs::path cmd_immunize(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  const auto data = load_data(c, opt);
  const auto model = load_model(c, opt);
  fs::create_directories(paths.immunize);
  write_json(paths.immunize / "config.json", to_json(c));
  for (auto method : c.methods) {
    const fs::path dir = paths.immunize / attack::method_slug(method);
    if (opt.reuse && done(dir)) {
      log(opt, "immunize: reusing " + dir.string());
      continue;
    }
    fs::create_directories(dir);
    log(opt, "immunize: " + std::string(attack::method_name(method)) + " on " + std::to_string(data.test.size()) +
                 " images");
    parallel_for(data.test.size(), opt.jobs, [&](std::size_t i) {
      const auto& item = data.test[i];
      attack::AttackConfig cfg = c.attack;
      cfg.seed = image_attack_seed(c, i);
      const auto r = attack::run_method(item.image, item.caption, model, cfg, method);
      io::write_ppm(dir / (item.id + ".ppm"), r.x_imu);
      const auto& d = r.state.delta.data();
      io::write_blob(dir / (item.id + ".delta"),
                     {{"kind", "delta"},
                      {"method", attack::method_name(method)},
                      {"id", item.id},
                      {"shape", r.state.delta.shape()},
                      {"gamma", c.attack.gamma},
                      {"linf", r.state.linf()}},
                     std::span<const float>(d.data(), d.size()));
      json rep = attack::attack_report(r, cfg, method);
      rep["id"] = item.id;
      write_json(dir / (item.id + ".json"), rep);
      for (const auto& w : r.state.warnings) log(opt, "immunize: " + item.id + ": " + w);
    });
    mark_done(dir, "immunize/" + attack::method_slug(method), c);
  }
  mark_done(paths.immunize, "immunize", c);
  return paths.immunize;
}

Tensor load_immunized(const ExperimentConfig& c, const RunOptions& opt, attack::Method m,
                      const toydiff::DatasetItem& item) {
  const auto paths = stage_paths(c, opt.out);
  const fs::path file = paths.immunize / attack::method_slug(m) / (item.id + ".delta");
  require({file});
  const auto blob = io::read_blob(file);
  if (blob.payload.size() != item.image.numel()) throw IoError("delta size mismatch in " + file.string());
  Tensor x(item.image.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = item.image[i] + blob.payload[i];
  return x;
}

// ---------------------------------------------------------------- evaluate

namespace {

struct Row {
  std::string image;
  std::size_t prompt_index = 0;
  std::string prompt;
  attack::Method method = attack::Method::kNone;
  iqa::MetricsReport metrics;
};

std::string metrics_header(bool defense) {
  std::string h;
  for (const auto& mi : iqa::metric_infos()) {
    const auto dir = defense ? mi.defense
                             : (mi.defense == iqa::Direction::kLowerIsStronger ? iqa::Direction::kHigherIsStronger
                                                                               : iqa::Direction::kLowerIsStronger);
    h += "," + std::string(mi.name) + "(" + std::string(iqa::arrow(dir)) + ")";
  }
  return h;
}

std::string metrics_cells(const iqa::MetricsReport& r) {
  std::string s;
  for (const auto& mi : iqa::metric_infos()) s += "," + fmt(iqa::metric_value(r, mi.name));
  return s;
}

json directions_json(bool defense) {
  json d;
  for (const auto& mi : iqa::metric_infos()) {
    const bool lower = (mi.defense == iqa::Direction::kLowerIsStronger) == defense;
    d[std::string(mi.name)] = lower ? "lower" : "higher";
  }
  return d;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json summarize(const std::vector<Row>& rows, const std::vector<attack::Method>& methods) {
  json out = json::array();
  for (auto m : methods) {
    json entry{{"method", attack::method_name(m)}};
    std::size_t n = 0;
    for (const auto& mi : iqa::metric_infos()) {
      std::vector<double> v;
      for (const auto& r : rows) {
        if (r.method == m) v.push_back(iqa::metric_value(r.metrics, mi.name));
      }
      n = v.size();
      double mean = 0.0;
      for (double x : v) mean += x;
      if (!v.empty()) mean /= static_cast<double>(v.size());
      entry[std::string(mi.name)] = {{"mean", mean}, {"median", median(v)}};
    }
    entry["n"] = n;
    out.push_back(std::move(entry));
  }
  return out;
}

std::string summary_csv(const json& summary) {
  std::string csv = "method,n";
  for (const auto& mi : iqa::metric_infos()) {
    csv += "," + std::string(mi.name) + "_mean," + std::string(mi.name) + "_median";
  }
  csv += "\n";
  for (const auto& e : summary) {
    csv += e["method"].get<std::string>() + "," + std::to_string(e["n"].get<std::size_t>());
    for (const auto& mi : iqa::metric_infos()) {
      const auto& m = e[std::string(mi.name)];
      csv += "," + fmt(m["mean"].get<double>()) + "," + fmt(m["median"].get<double>());
    }
    csv += "\n";
  }
  return csv;
}

json rows_json(const std::vector<Row>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = iqa::to_json(r.metrics);
    j["image"] = r.image;
    j["method"] = attack::method_name(r.method);
    if (!r.prompt.empty()) {
      j["prompt_index"] = r.prompt_index;
      j["prompt"] = r.prompt;
    }
    out.push_back(std::move(j));
  }
  return out;
}

void dump_attention(const fs::path& stem, const toydiff::DenoiserModel& model, const Tensor& x,
                    const toydiff::Prompt& prompt, std::size_t t, std::size_t bins, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor eps = normal_tensor(x.shape(), rng);
  diffcore::Tape tape;
  auto fwd = toydiff::predict_noise(model, tape.constant(toydiff::forward_diffuse(model.schedule(), x, t, eps)), t,
                                    prompt, true);
  const auto agg = attnmask::aggregate(*fwd.attention, prompt);
  attnmask::dump_debug(stem, agg, attnmask::make_mask(agg, bins, t));
}

}  // namespace

fs::path cmd_evaluate(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  if (opt.reuse && done(paths.evaluate)) {
    log(opt, "evaluate: reusing " + paths.evaluate.string());
    return paths.evaluate;
  }
  {
    std::vector<fs::path> needed = {paths.data / kMarker, paths.model / kMarker};
    for (auto m : c.methods) needed.push_back(paths.immunize / attack::method_slug(m) / kMarker);
    require(needed);
  }
  const auto data = load_data(c, opt);
  const auto model = load_model(c, opt);
  const std::size_t t_edit = t_edit_of(c, model);
  const auto ts = c.attack.resolved_timesteps(model.schedule().steps());
  const std::size_t heat_t = ts[ts.size() / 2];

  {
    std::vector<fs::path> deltas;
    for (auto m : c.methods)
      for (const auto& it : data.test) deltas.push_back(paths.immunize / attack::method_slug(m) / (it.id + ".delta"));
    require(deltas);
  }

  fs::create_directories(paths.evaluate / "edits" / "clean");
  fs::create_directories(paths.evaluate / "heatmaps");
  for (auto m : c.methods) fs::create_directories(paths.evaluate / "edits" / attack::method_slug(m));

  std::vector<std::vector<Row>> defense(data.test.size()), impercept(data.test.size());
  log(opt, "evaluate: " + std::to_string(data.test.size()) + " images, " + std::to_string(c.methods.size()) +
               " methods, t_edit " + std::to_string(t_edit));
  parallel_for(data.test.size(), opt.jobs, [&](std::size_t i) {
    const auto& item = data.test[i];
    const auto prompts = edit_prompts(c, item, i);
    std::vector<Tensor> imus;
    for (auto m : c.methods) imus.push_back(load_immunized(c, opt, m, item));
    for (std::size_t k = 0; k < c.methods.size(); ++k) {
      impercept[i].push_back({item.id, 0, "", c.methods[k], iqa::compute_metrics(item.image, imus[k], model)});
    }
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      const std::string suffix = "_p" + std::to_string(p) + ".ppm";
      Rng rng0(edit_seed(c, i, p));
      const Tensor clean = toydiff::edit(model, item.image, prompts[p], t_edit, rng0);
      io::write_ppm(paths.evaluate / "edits" / "clean" / (item.id + suffix), clean);
      for (std::size_t k = 0; k < c.methods.size(); ++k) {
        Rng rng(edit_seed(c, i, p));
        const Tensor edited = toydiff::edit(model, imus[k], prompts[p], t_edit, rng);
        io::write_ppm(paths.evaluate / "edits" / attack::method_slug(c.methods[k]) / (item.id + suffix), edited);
        defense[i].push_back({item.id, p, prompts[p].text(), c.methods[k], iqa::compute_metrics(clean, edited, model)});
      }
    }
    const std::uint64_t hs = derive_seed(c.seed, {0x4ea7, i});
    dump_attention(paths.evaluate / "heatmaps" / (item.id + "_source"), model, item.image, item.caption, heat_t,
                   c.attack.bins, hs);
    for (std::size_t k = 0; k < c.methods.size(); ++k) {
      if (c.methods[k] == attack::Method::kNone) continue;
      dump_attention(paths.evaluate / "heatmaps" / (item.id + "_" + attack::method_slug(c.methods[k])), model,
                     imus[k], item.caption, heat_t, c.attack.bins, hs);
    }
  });

  std::vector<Row> def_rows, imp_rows;
  for (auto& v : defense) def_rows.insert(def_rows.end(), v.begin(), v.end());
  for (auto& v : impercept) imp_rows.insert(imp_rows.end(), v.begin(), v.end());

  std::string def_csv = "image,prompt_index,prompt,method" + metrics_header(true) + "\n";
  for (const auto& r : def_rows) {
    def_csv += r.image + "," + std::to_string(r.prompt_index) + "," + r.prompt + "," +
               std::string(attack::method_name(r.method)) + metrics_cells(r.metrics) + "\n";
  }
  std::string imp_csv = "image,method" + metrics_header(false) + "\n";
  for (const auto& r : imp_rows) {
    imp_csv += r.image + "," + std::string(attack::method_name(r.method)) + metrics_cells(r.metrics) + "\n";
  }
  const json def_summary = summarize(def_rows, c.methods), imp_summary = summarize(imp_rows, c.methods);
  write_text(paths.evaluate / "defense.csv", def_csv);
  write_text(paths.evaluate / "imperceptibility.csv", imp_csv);
  write_text(paths.evaluate / "defense_summary.csv", summary_csv(def_summary));
  write_text(paths.evaluate / "imperceptibility_summary.csv", summary_csv(imp_summary));
  write_json(paths.evaluate / "results.json",
             {{"t_edit", t_edit},
              {"prompt_policy", policy_name(c.edit.policy)},
              {"defense", {{"comparison", "edit(x0) vs edit(x_imu), shared edit seed"},
                           {"directions", directions_json(true)},
                           {"rows", rows_json(def_rows)},
                           {"summary", def_summary}}},
              {"imperceptibility", {{"comparison", "x0 vs x_imu"},
                                    {"directions", directions_json(false)},
                                    {"rows", rows_json(imp_rows)},
                                    {"summary", imp_summary}}}});
  write_json(paths.evaluate / "config.json", to_json(c));
  mark_done(paths.evaluate, "evaluate", c);
  log(opt, "evaluate: wrote " + paths.evaluate.string());
  return paths.evaluate;
}

// ---------------------------------------------------------------- ablate

namespace {

struct AblationRun {
  std::string label;
  attack::Method method;
  std::size_t bins;
  iqa::MetricsReport mean;
  double time_per_iter = 0.0;
  std::vector<std::vector<double>> daa, nba;  // per image, per iteration
};

}  // namespace

fs::path cmd_ablate(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  if (opt.reuse && done(paths.ablate)) {
    log(opt, "ablate: reusing " + paths.ablate.string());
    return paths.ablate;
  }
  const auto data = load_data(c, opt);
  const auto model = load_model(c, opt);
  const std::size_t n_img = std::min(c.ablation.images, data.test.size());
  const std::size_t iters = c.ablation.iterations ? c.ablation.iterations : c.attack.iterations;
  const std::size_t t_edit = t_edit_of(c, model);

  auto run = [&](const std::string& label, attack::Method method, std::size_t bins) {
    AblationRun r{label, method, bins, {}, 0.0, std::vector<std::vector<double>>(n_img),
                  std::vector<std::vector<double>>(n_img)};
    std::vector<iqa::MetricsReport> per(n_img);
    std::vector<double> seconds(n_img, 0.0);
    parallel_for(n_img, opt.jobs, [&](std::size_t i) {
      const auto& item = data.test[i];
      attack::AttackConfig cfg = c.attack;
      cfg.seed = image_attack_seed(c, i);
      cfg.iterations = iters;
      cfg.bins = bins;
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = attack::run_method(item.image, item.caption, model, cfg, method);
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& tr : res.state.trace) {
        r.daa[i].push_back(tr.daa);
        r.nba[i].push_back(tr.nba);
      }
      Rng rng0(edit_seed(c, i, 0)), rng1(edit_seed(c, i, 0));
      const Tensor clean = toydiff::edit(model, item.image, item.caption, t_edit, rng0);
      const Tensor edited = toydiff::edit(model, res.x_imu, item.caption, t_edit, rng1);
      per[i] = iqa::compute_metrics(clean, edited, model);
    });
    for (const auto& m : per) {
      r.mean.psnr += m.psnr / static_cast<double>(n_img);
      r.mean.ssim += m.ssim / static_cast<double>(n_img);
      r.mean.vifp += m.vifp / static_cast<double>(n_img);
      r.mean.percep_dist += m.percep_dist / static_cast<double>(n_img);
    }
    double total = 0.0;
    for (double s : seconds) total += s;
    r.time_per_iter = iters ? total / static_cast<double>(n_img * iters) : 0.0;
    log(opt, "ablate: " + label + " psnr " + fmt(r.mean.psnr));
    return r;
  };

  std::vector<AblationRun> table;
  for (auto m : {attack::Method::kDanp, attack::Method::kWoDaa, attack::Method::kWoNba}) {
    table.push_back(run(std::string(attack::method_name(m)), m, c.attack.bins));
  }
  std::vector<AblationRun> sweep;
  for (auto b : c.ablation.bins) {
    if (b == c.attack.bins) {
      AblationRun copy = table.front();
      copy.label = "L=" + std::to_string(b);
      sweep.push_back(std::move(copy));
    } else {
      sweep.push_back(run("L=" + std::to_string(b), attack::Method::kDanp, b));
    }
  }

  // Mask construction cost per call, on maps captured from the first images.
  std::vector<attnmask::AggregatedAttention> maps;
  {
    const auto ts = c.attack.resolved_timesteps(model.schedule().steps());
    for (std::size_t i = 0; i < n_img; ++i) {
      for (std::size_t t : ts) {
        Rng rng(derive_seed(c.seed, {0x71e, i, t}));
        const Tensor eps = normal_tensor(data.test[i].image.shape(), rng);
        diffcore::Tape tape;
        auto fwd = toydiff::predict_noise(
            model, tape.constant(toydiff::forward_diffuse(model.schedule(), data.test[i].image, t, eps)), t,
            data.test[i].caption, true);
        maps.push_back(attnmask::aggregate(*fwd.attention, data.test[i].caption));
      }
    }
  }
  std::vector<double> mask_us;
  for (auto b : c.ablation.bins) {
    std::vector<double> reps;
    for (std::size_t r = 0; r < c.ablation.timing_repeats; ++r) {
      constexpr std::size_t kLoops = 50;
      volatile std::size_t sink = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t l = 0; l < kLoops; ++l)
        for (const auto& m : maps) sink = sink + attnmask::make_mask(m, b).ones();
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      reps.push_back(1e6 * s / static_cast<double>(kLoops * maps.size()));
    }
    mask_us.push_back(median(reps));
  }

  auto metric_cells = [](const iqa::MetricsReport& m) {
    return fmt(m.psnr) + "," + fmt(m.ssim) + "," + fmt(m.vifp) + "," + fmt(m.percep_dist);
  };
  std::string abl_csv = "method,psnr(↓),ssim(↓),vifp(↓),percep_dist(↑),time_per_iter_s\n";
  json abl_rows = json::array();
  for (const auto& r : table) {
    abl_csv += r.label + "," + metric_cells(r.mean) + "," + fmt(r.time_per_iter) + "\n";
    bool daa_zero = true, nba_zero = true;
    for (const auto& v : r.daa)
      for (double x : v) daa_zero = daa_zero && x == 0.0;
    for (const auto& v : r.nba)
      for (double x : v) nba_zero = nba_zero && x == 0.0;
    json row = iqa::to_json(r.mean);
    row.erase("vifp_degenerate");
    row["method"] = r.label;
    row["time_per_iter_s"] = r.time_per_iter;
    row["daa_identically_zero"] = daa_zero;
    row["nba_identically_zero"] = nba_zero;
    row["trace_daa"] = r.daa;
    row["trace_nba"] = r.nba;
    abl_rows.push_back(std::move(row));
  }
  std::string bins_csv = "bins,psnr(↓),ssim(↓),vifp(↓),percep_dist(↑),time_per_iter_s,mask_time_us\n";
  json bin_rows = json::array();
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    const auto& r = sweep[k];
    bins_csv += std::to_string(r.bins) + "," + metric_cells(r.mean) + "," + fmt(r.time_per_iter) + "," +
                fmt(mask_us[k]) + "\n";
    json row = iqa::to_json(r.mean);
    row.erase("vifp_degenerate");
    row["bins"] = r.bins;
    row["time_per_iter_s"] = r.time_per_iter;
    row["mask_time_us"] = mask_us[k];
    bin_rows.push_back(std::move(row));
  }
  write_text(paths.ablate / "ablation.csv", abl_csv);
  write_text(paths.ablate / "bins.csv", bins_csv);
  write_json(paths.ablate / "ablation.json", {{"images", n_img},
                                              {"iterations", iters},
                                              {"comparison", "edit(x0) vs edit(x_imu), original caption, mean"},
                                              {"rows", abl_rows},
                                              {"bin_sweep", bin_rows}});
  write_json(paths.ablate / "config.json", to_json(c));
  mark_done(paths.ablate, "ablate", c);
  log(opt, "ablate: wrote " + paths.ablate.string());
  return paths.ablate;
}

// ---------------------------------------------------------------- report

namespace {

void check_summary_schema(const json& summary, const fs::path& file) {
  if (!summary.is_array()) throw ContractError("report: schema mismatch in " + file.string());
  for (const auto& e : summary) {
    if (!e.contains("method") || !e.contains("n")) throw ContractError("report: schema mismatch in " + file.string());
    for (const auto& mi : iqa::metric_infos()) {
      const std::string k(mi.name);
      if (!e.contains(k) || !e[k].contains("mean") || !e[k].contains("median")) {
        throw ContractError("report: schema mismatch in " + file.string() + " (metric " + k + ")");
      }
    }
  }
}

std::string summary_table(const json& summary, bool defense) {
  std::string md = "| method | n |";
  std::string rule = "|---|---|";
  for (const auto& mi : iqa::metric_infos()) {
    const bool lower = (mi.defense == iqa::Direction::kLowerIsStronger) == defense;
    md += " " + std::string(mi.name) + " " + (lower ? "↓" : "↑") + " mean | median |";
    rule += "---|---|";
  }
  md += "\n" + rule + "\n";
  for (const auto& e : summary) {
    md += "| " + e["method"].get<std::string>() + " | " + std::to_string(e["n"].get<std::size_t>()) + " |";
    for (const auto& mi : iqa::metric_infos()) {
      const auto& m = e[std::string(mi.name)];
      md += " " + fmt(m["mean"].get<double>()) + " | " + fmt(m["median"].get<double>()) + " |";
    }
    md += "\n";
  }
  return md;
}

}  // namespace

fs::path cmd_report(const ExperimentConfig& c, const RunOptions& opt) {
  c.validate();
  const auto paths = stage_paths(c, opt.out);
  require({paths.model / "train_report.json", paths.evaluate / kMarker, paths.evaluate / "results.json",
           paths.ablate / kMarker, paths.ablate / "ablation.json"});
  const json train = read_json(paths.model / "train_report.json");
  const json results = read_json(paths.evaluate / "results.json");
  const json ablation = read_json(paths.ablate / "ablation.json");
  for (const char* section : {"defense", "imperceptibility"}) {
    if (!results.contains(section)) throw ContractError("report: results.json lacks section " + std::string(section));
    check_summary_schema(results[section]["summary"], paths.evaluate / "results.json");
  }
  if (!ablation.contains("rows") || !ablation.contains("bin_sweep")) {
    throw ContractError("report: schema mismatch in " + (paths.ablate / "ablation.json").string());
  }

  std::string md;
  md += "# DANP toy-scale report\n\n";
  md += "config hash: `" + paths.config_hash + "`\n\n";
  md += "## Training\n\n";
  md += "- parameters: " + std::to_string(train["parameter_count"].get<std::size_t>()) + "\n";
  md += "- steps: " + std::to_string(train["steps"].get<std::size_t>()) + "\n";
  md += "- held-out loss: " + fmt(train["initial_holdout_loss"].get<double>()) + " -> " +
        fmt(train["final_holdout_loss"].get<double>()) + " (threshold " +
        fmt(train["holdout_threshold"].get<double>()) + ", " +
        (train["passed_threshold"].get<bool>() ? "passed" : "NOT passed") + ")\n\n";
  md += "## Defense\n\nedit(x0) vs edit(x_imu) with a shared edit seed, t_edit " +
        std::to_string(results["t_edit"].get<std::size_t>()) + ", prompt policy " +
        results["prompt_policy"].get<std::string>() +
        ". Lower PSNR/SSIM/VIFp and higher percep_dist mean a stronger defense.\n\n";
  md += summary_table(results["defense"]["summary"], true) + "\n";
  md += "## Imperceptibility\n\nx0 vs x_imu. Higher PSNR/SSIM/VIFp and lower percep_dist mean a less visible "
        "perturbation.\n\n";
  md += summary_table(results["imperceptibility"]["summary"], false) + "\n";
  md += "## Ablation\n\n" + std::to_string(ablation["images"].get<std::size_t>()) + " images, " +
        std::to_string(ablation["iterations"].get<std::size_t>()) + " iterations, original caption.\n\n";
  md += "| method | psnr ↓ | ssim ↓ | vifp ↓ | percep_dist ↑ | time/iter (s) |\n|---|---|---|---|---|---|\n";
  for (const auto& r : ablation["rows"]) {
    md += "| " + r["method"].get<std::string>() + " | " + fmt(r["psnr"].get<double>()) + " | " +
          fmt(r["ssim"].get<double>()) + " | " + fmt(r["vifp"].get<double>()) + " | " +
          fmt(r["percep_dist"].get<double>()) + " | " + fmt(r["time_per_iter_s"].get<double>()) + " |\n";
  }
  md += "\n## Bin sweep\n\n| L | psnr ↓ | ssim ↓ | vifp ↓ | percep_dist ↑ | time/iter (s) | mask time (us) |\n"
        "|---|---|---|---|---|---|---|\n";
  for (const auto& r : ablation["bin_sweep"]) {
    md += "| " + std::to_string(r["bins"].get<std::size_t>()) + " | " + fmt(r["psnr"].get<double>()) + " | " +
          fmt(r["ssim"].get<double>()) + " | " + fmt(r["vifp"].get<double>()) + " | " +
          fmt(r["percep_dist"].get<double>()) + " | " + fmt(r["time_per_iter_s"].get<double>()) + " | " +
          fmt(r["mask_time_us"].get<double>()) + " |\n";
  }

  json machine{{"config_hash", paths.config_hash},
               {"config", to_json(c)},
               {"training", train},
               {"defense", {{"directions", results["defense"]["directions"]}, {"summary", results["defense"]["summary"]}}},
               {"imperceptibility",
                {{"directions", results["imperceptibility"]["directions"]},
                 {"summary", results["imperceptibility"]["summary"]}}},
               {"ablation", ablation["rows"]},
               {"bin_sweep", ablation["bin_sweep"]},
               {"loss_balancing", "daa / pixels, nba / noise elements"}};
  for (auto& r : machine["ablation"]) {
    r.erase("trace_daa");
    r.erase("trace_nba");
  }
  fs::create_directories(paths.report);
  write_text(paths.report / "report.md", md);
  write_json(paths.report / "report.json", machine);
  write_json(paths.report / "config.json", to_json(c));
  mark_done(paths.report, "report", c);
  log(opt, "report: wrote " + (paths.report / "report.md").string());
  return paths.report;
}

void run_pipeline(const ExperimentConfig& c, const RunOptions& opt) {
  cmd_gen_data(c, opt);
  cmd_train(c, opt);
  cmd_immunize(c, opt);
  cmd_evaluate(c, opt);
}

}  // namespace danp::harness
