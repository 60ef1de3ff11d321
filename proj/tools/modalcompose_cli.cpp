// Command-line front end: gen-data, train, compose, eval, analyze, robust, sweep.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "modalcompose/errors.hpp"
#include "modalcompose/harness.hpp"

namespace fs = std::filesystem;
using namespace modalcompose;

namespace {

struct Common {
  std::string config;
  std::string env;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (!c.env.empty()) cfg.env.kind = parse_env_kind(c.env);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void write_output(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write " + out);
  f << text;
  if (!f) throw Error("failed writing " + out);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration file")->check(CLI::ExistingFile);
  app->add_option("--env", c.env, "Environment: occluded_reach or phase_reach");
  app->add_option("--seed", c.seed, "Seed (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-composable diffusion policies on synthetic multimodal reaching tasks"};
  app.require_subcommand(1);

  Common common;
  std::string out, data, methods, experts, weights, router, strategy, manifest, scenario, sizes, label;
  std::size_t gen_n = 0, eval_n = 200, analyze_n = 1, robust_n = 200, sweep_n = 0;

  auto* gen = app.add_subcommand("gen-data", "Record scripted demonstrations");
  add_common(gen, common);
  gen->add_option("--n", gen_n, "Number of successful episodes")->required();
  gen->add_option("--out", out, "Dataset file (.mcds)")->required();

  auto* train = app.add_subcommand("train", "Train experts, router and baselines");
  add_common(train, common);
  train->add_option("--data", data, "Dataset file (generated from the config when absent)");
  train->add_option("--method", methods, "Comma list of expert:<m>, router, concat, moe");
  train->add_option("--out", out, "Output directory")->required();

  auto* compose = app.add_subcommand("compose", "Write a manifest combining expert checkpoints");
  compose->add_option("--experts", experts, "Comma list of expert checkpoints")->required();
  auto* w_opt = compose->add_option("--weights", weights, "Fixed weights, one per expert");
  auto* r_opt = compose->add_option("--router", router, "Router checkpoint");
  w_opt->excludes(r_opt);
  compose->add_option("--strategy", strategy, "soft, hard or top2 (router only)");
  compose->add_option("--method", label, "Label used in metrics tables");
  compose->add_option("--out", out, "Manifest file")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a policy manifest");
  add_common(eval, common);
  eval->add_option("--manifest", manifest, "Policy manifest")->required();
  eval->add_option("--n", eval_n, "Episodes")->capture_default_str();
  eval->add_option("--strategy", strategy, "Override the routing strategy");
  eval->add_option("--out", out, "Metrics CSV (stdout when absent)");

  auto* analyze = app.add_subcommand("analyze", "Perturbation importance traces");
  add_common(analyze, common);
  analyze->add_option("--manifest", manifest, "Policy manifest")->required();
  analyze->add_option("--data", data, "Dataset used to calibrate the perturbation scale")->required();
  analyze->add_option("--n", analyze_n, "Episodes (one CSV each)")->capture_default_str();
  analyze->add_option("--out", out, "Trace CSV; episode j > 0 goes to <stem>_<j>.csv")->required();

  auto* robust = app.add_subcommand("robust", "Evaluate under a robustness scenario");
  add_common(robust, common);
  robust->add_option("--manifest", manifest, "Policy manifest")->required();
  robust->add_option("--scenario", scenario,
                     "none | perturb:<step> | reposition | corrupt:<zero|freeze|gaussian=s>:<modality>[:always|"
                     ":occluded|:at=<step>]")
      ->default_val("none");
  robust->add_option("--n", robust_n, "Episodes")->capture_default_str();
  robust->add_option("--out", out, "Metrics CSV (stdout when absent)");

  auto* sweep = app.add_subcommand("sweep", "Dataset-size sweep of the composed policy against concatenation");
  add_common(sweep, common);
  sweep->add_option("--sizes", sizes, "Ascending comma list of dataset sizes")->default_val("25,50,100");
  sweep->add_option("--n", sweep_n, "Evaluation episodes (overrides the config)");
  sweep->add_option("--out", out, "Metrics CSV (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const RunConfig cfg = resolve_config(common);
      if (gen_n == 0) throw ConfigError("--n must be >= 1");
      const Dataset ds = generate_dataset(cfg.env, gen_n, cfg.seed);
      write_dataset(ds, out);
      std::cerr << "wrote " << ds.episodes.size() << " episodes (" << ds.step_count() << " steps) to " << out << "\n";
    } else if (*train) {
      RunConfig cfg = resolve_config(common);
      if (!data.empty()) cfg.data_path = data;
      if (!methods.empty()) cfg.methods = split_csv(methods);
      cfg.validate();
      const Dataset ds = prepare_dataset(cfg);
      const TrainingOutputs res = run_training(cfg, ds, out);
      for (const auto& p : res.checkpoints) std::cerr << "wrote " << p.string() << "\n";
    } else if (*compose) {
      Manifest m;
      m.kind = "composed";
      for (const auto& e : split_csv(experts)) m.experts.emplace_back(e);
      if (!weights.empty()) {
        m.weights = parse_double_list(weights);
        if (m.weights.size() != m.experts.size()) throw ConfigError("--weights needs one value per expert");
        normalize_fixed_weights(m.weights);
      } else if (!router.empty()) {
        m.router = router;
      } else {
        throw ConfigError("compose needs --weights or --router");
      }
      if (!strategy.empty()) {
        if (router.empty()) throw ConfigError("--strategy applies to router manifests only");
        m.strategy = parse_strategy(strategy);
      }
      m.method = label;
      const Checkpoint first = load_checkpoint(m.experts.front());
      m.norm_hash = std::to_string(checkpoint_context(first).norm.hash());
      // write_manifest stores these relative to the manifest's directory.
      for (auto& e : m.experts) e = fs::absolute(e);
      if (!m.router.empty()) m.router = fs::absolute(m.router);
      write_manifest(m, out);
      std::cerr << "wrote " << out << "\n";
    } else if (*eval) {
      const RunConfig cfg = resolve_config(common);
      Manifest m = read_manifest(manifest);
      if (!strategy.empty()) m.strategy = parse_strategy(strategy);
      MetricsTable t;
      t.rows.push_back(run_eval(m, cfg.env, eval_n, cfg.seed));
      write_output(out, t.to_csv());
    } else if (*analyze) {
      const RunConfig cfg = resolve_config(common);
      const Manifest m = read_manifest(manifest);
      const LoadedPolicy p = load_policy(m, cfg.env);
      const Dataset ds = read_dataset(data);
      ImportanceConfig ic;
      ic.sigma = calibrate_sigma(ds);
      if (analyze_n == 0) throw ConfigError("--n must be >= 1");
      for (std::size_t j = 0; j < analyze_n; ++j) {
        const ImportanceTrace trace = perturb_importance(cfg.env, *p.actor, cfg.seed, j, ic);
        std::ostringstream ss;
        write_importance_csv(ss, trace);
        fs::path path(out);
        if (j > 0) path.replace_filename(path.stem().string() + "_" + std::to_string(j) + path.extension().string());
        write_output(path.string(), ss.str());
      }
    } else if (*robust) {
      const RunConfig cfg = resolve_config(common);
      const ScenarioSpec s = parse_scenario(scenario);
      MetricsTable t;
      t.rows.push_back(run_eval(read_manifest(manifest), cfg.env, robust_n, cfg.seed, s));
      write_output(out, t.to_csv());
    } else if (*sweep) {
      RunConfig cfg = resolve_config(common);
      if (sweep_n > 0) cfg.eval_episodes = sweep_n;
      write_output(out, sweep_dataset_size(cfg, parse_size_list(sizes)).to_csv());
    }
  } catch (const modalcompose::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
