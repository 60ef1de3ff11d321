#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "modalcompose/analysis.hpp"
#include "modalcompose/baselines.hpp"
#include "modalcompose/checkpoint.hpp"
#include "modalcompose/config.hpp"

namespace modalcompose {

// ---------------------------------------------------------------- metrics

struct MetricsRow {
  std::string task;
  std::string method;
  double success_rate = 0.0;
  double mean_steps = 0.0;
  std::size_t param_count = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// CSV columns: task,method,success_rate,mean_steps,param_count,seed
struct MetricsTable {
  std::vector<MetricsRow> rows;

  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  void save(const std::filesystem::path& path) const;
};

// ---------------------------------------------------------------- training

// Trained models of one run, in memory. Experts keep the run's modality order.
struct TrainedModels {
  RunContext context;
  std::vector<ModalityExpert> experts;
  std::optional<Router> router;
  std::optional<ConcatPolicy> concat;
  std::optional<MoEFeaturePolicy> moe;
  std::map<std::string, std::vector<double>> loss_history;  // by method

  const ModalityExpert* expert(const std::string& modality) const;
  std::vector<ExpertRef> expert_refs() const;
};

// The config's dataset: read from data.path when set, else generated with
// data.episodes episodes from the run seed. Restricted to the run's
// modalities.
Dataset prepare_dataset(const RunConfig& cfg);

// Trains `methods` (expert:<m>, router, concat, moe) on `ds`. Each method
// draws from its own stream of cfg.seed, so results do not depend on which
// other methods are trained alongside. The router needs experts for every
// modality of the run, either trained here or given in `prior`. With
// cfg.joint the router and fresh experts are trained together and replace
// the experts.
TrainedModels train_models(const RunConfig& cfg, const Dataset& ds, const std::vector<std::string>& methods,
                           const TrainedModels* prior = nullptr);

struct TrainingOutputs {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> loss_files;
  std::vector<std::filesystem::path> manifests;
};

// Writes expert_<m>.ckpt, router.ckpt, concat.ckpt, moe.ckpt (as trained),
// loss_<method>.csv (step,loss) and a manifest per policy into `out_dir`.
// Existing expert checkpoints in `out_dir` are reused when the router is
// requested without them.
TrainingOutputs run_training(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------- manifests

/// Text description of an evaluable policy, one `key=value` per line:
///   kind=composed|concat|moe|scripted|random
///   expert=<checkpoint>      (composed, repeated, modality order)
///   router=<checkpoint> and strategy=<soft|hard|top2>, or weights=<w1,w2,..>
///   model=<checkpoint>       (concat, moe)
///   method=<label>           (optional metrics label)
///   norm_hash=<n>            (optional; checked against the checkpoints)
/// Relative paths are resolved against the manifest's directory.
struct Manifest {
  std::string kind = "composed";
  std::vector<std::filesystem::path> experts;
  std::filesystem::path router;
  std::vector<double> weights;
  RoutingStrategy strategy = RoutingStrategy::soft;
  std::filesystem::path model;
  std::string method;
  std::string norm_hash;

  std::string label() const;
};

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
Manifest read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void write_manifest(const Manifest& m, const std::filesystem::path& path);

struct LoadedPolicy {
  std::shared_ptr<const Actor> actor;
  std::string method;
  std::size_t param_count = 0;
  std::optional<RunContext> context;  // absent for scripted / random
};

// Loads and cross-checks every checkpoint a manifest references. Throws
// ContractError on incompatible checkpoints. `env` is used by scripted
// manifests and checked against checkpoint metadata.
LoadedPolicy load_policy(const Manifest& m, const EnvSpec& env);

// Evaluates the manifest's policy for n episodes.
MetricsRow run_eval(const Manifest& m, const EnvSpec& env, std::size_t n, std::uint64_t seed,
                    const ScenarioSpec& scenario = {});
MetricsRow metrics_row(const EnvSpec& env, const std::string& method, const EvalSummary& s, std::size_t params,
                       std::uint64_t seed);

// ---------------------------------------------------------------- policies

std::shared_ptr<const ComposedPolicy> composed_policy(const TrainedModels& m, RoutingStrategy strategy);
std::shared_ptr<const ComposedPolicy> fixed_policy(const TrainedModels& m, const std::vector<double>& weights);

// ---------------------------------------------------------------- sweep

// For each size: generate a dataset, train the composed system and the
// concatenation baseline, evaluate both. Sizes must be nonempty and strictly
// ascending (duplicates are rejected).
MetricsTable sweep_dataset_size(const RunConfig& cfg, const std::vector<std::size_t>& sizes);

}  // namespace modalcompose
