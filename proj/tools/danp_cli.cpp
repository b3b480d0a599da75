#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "danp/error.hpp"
#include "danp/harness/experiment.hpp"
#include "danp/io/ppm.hpp"
#include "danp/toydiff/sampler.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "runs";
  std::string methods;
  std::size_t jobs = 1;
  bool fresh = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (JSON)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) {
        c.seed = s;
        c.seed_set = true;
      }, "Override the experiment seed");
  app->add_option("--out", c.out, "Output root for content-addressed stage directories")->capture_default_str();
  app->add_option("--methods", c.methods, "Comma-separated methods (none,random-noise,sa-style,danp,w/o-daa,w/o-nba)");
  app->add_option("--jobs", c.jobs, "Worker threads for per-image jobs")->capture_default_str()->check(
      CLI::PositiveNumber);
  app->add_flag("--fresh", c.fresh, "Recompute stages even when outputs exist");
}

danp::harness::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? danp::harness::ExperimentConfig{} : danp::harness::load_config(c.config);
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.methods.empty()) {
    cfg.methods.clear();
    std::stringstream ss(c.methods);
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (!m.empty()) cfg.methods.push_back(danp::attack::parse_method(m));
    }
  }
  cfg.validate();
  return cfg;
}

danp::harness::RunOptions options(const Common& c) {
  danp::harness::RunOptions o;
  o.out = c.out;
  o.jobs = c.jobs;
  o.reuse = !c.fresh;
  o.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale DANP image immunization: data, training, attacks, edits and metrics"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Render the procedural dataset");
  auto* train = app.add_subcommand("train", "Train the toy denoiser");
  auto* imm = app.add_subcommand("immunize", "Immunize every test image with each method");
  auto* edit = app.add_subcommand("edit", "Edit one image with the trained model");
  auto* eval = app.add_subcommand("evaluate", "Defense and imperceptibility metrics");
  auto* abl = app.add_subcommand("ablate", "Ablation and bin-count sweep");
  auto* rep = app.add_subcommand("report", "Merge tables into a summary");
  auto* all = app.add_subcommand("all", "gen-data, train, immunize, evaluate, ablate and report");
  for (auto* s : {gen, train, imm, edit, eval, abl, rep, all}) add_common(s, common);

  std::string image, prompt, output;
  std::size_t t_edit = 0;
  std::uint64_t edit_seed = 0;
  edit->add_option("--image", image, "Input P6 image")->required();
  edit->add_option("--prompt", prompt, "Edit caption, e.g. \"blue circle on white background\"")->required();
  edit->add_option("--output", output, "Output P6 image")->required();
  edit->add_option("--t-edit", t_edit, "Edit timestep (0 = default 0.6 T)");
  edit->add_option("--edit-seed", edit_seed, "Sampler seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = resolve(common);
    const auto opt = options(common);
    namespace h = danp::harness;
    if (*gen) {
      std::cout << h::cmd_gen_data(cfg, opt).string() << "\n";
    } else if (*train) {
      std::cout << h::cmd_train(cfg, opt).string() << "\n";
    } else if (*imm) {
      std::cout << h::cmd_immunize(cfg, opt).string() << "\n";
    } else if (*eval) {
      std::cout << h::cmd_evaluate(cfg, opt).string() << "\n";
    } else if (*abl) {
      std::cout << h::cmd_ablate(cfg, opt).string() << "\n";
    } else if (*rep) {
      std::cout << h::cmd_report(cfg, opt).string() << "\n";
    } else if (*all) {
      h::run_pipeline(cfg, opt);
      h::cmd_ablate(cfg, opt);
      std::cout << h::cmd_report(cfg, opt).string() << "\n";
    } else if (*edit) {
      const auto model = h::load_model(cfg, opt);
      const auto x = danp::io::read_ppm(image);
      danp::Rng rng(edit_seed);
      const auto steps = t_edit ? t_edit : danp::toydiff::default_edit_timestep(model);
      danp::io::write_ppm(output, danp::toydiff::edit(model, x, danp::toydiff::tokenize(prompt), steps, rng));
      std::cout << output << "\n";
    }
  } catch (const danp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const danp::MissingArtifactError& e) {
    std::cerr << e.what() << "\n";
    return kExitMissing;
  } catch (const danp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
