#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/compose.hpp"
#include "modalcompose/dataset.hpp"
#include "modalcompose/env.hpp"

namespace modalcompose {

/// Something that can drive an environment: a learned policy, the scripted
/// demonstrator (which reads the true state) or a random baseline.
class Actor {
 public:
  virtual ~Actor() = default;
  // Action chunk, executed open loop before the next query.
  virtual std::vector<double> act(const EnvState& state, const Observation& obs, Rng& rng) const = 0;
  virtual std::string name() const = 0;
  virtual std::size_t param_count() const { return 0; }
};

class PolicyActor final : public Actor {
 public:
  explicit PolicyActor(std::shared_ptr<const Policy> policy);
  std::vector<double> act(const EnvState&, const Observation& obs, Rng& rng) const override;
  std::string name() const override { return policy_->name(); }
  std::size_t param_count() const override { return policy_->param_count(); }
  const Policy& policy() const noexcept { return *policy_; }

 private:
  std::shared_ptr<const Policy> policy_;
};

class ScriptedActor final : public Actor {
 public:
  explicit ScriptedActor(EnvSpec spec) : spec_(std::move(spec)) {}
  std::vector<double> act(const EnvState& state, const Observation&, Rng& rng) const override;
  std::string name() const override { return "scripted"; }

 private:
  EnvSpec spec_;
};

// Uniform actions in [-1, 1]^dim.
class RandomActor final : public Actor {
 public:
  explicit RandomActor(std::size_t action_dim) : dim_(action_dim) {}
  std::vector<double> act(const EnvState&, const Observation&, Rng& rng) const override;
  std::string name() const override { return "random"; }

 private:
  std::size_t dim_;
};

// ---------------------------------------------------------------- corruption

enum class CorruptionKind { zero, freeze, gaussian };

struct CorruptionMode {
  CorruptionKind kind = CorruptionKind::zero;
  std::string modality;
  double sigma = 0.0;  // gaussian only
};

// When a corruption starts acting. Once started it stays on.
enum class CorruptionTrigger { always, at_step, on_occlusion };

// zero: all zeros. gaussian: adds N(0, sigma^2) per coordinate drawn from
// `rng`. freeze: replaced by `held` (the reading when the corruption began).
// Throws ContractError naming a modality absent from `obs`.
Observation corrupt_modality(const Observation& obs, const CorruptionMode& mode, Rng& rng,
                             std::span<const double> held = {});

/// Stateful corruption of one episode's observation stream.
class SensorCorruption {
 public:
  SensorCorruption(CorruptionMode mode, CorruptionTrigger trigger, int start_step = 0);

  // Observation handed to the policy at step t.
  Observation apply(const Observation& obs, const EnvState& state, const EnvSpec& spec, Rng& rng);
  bool active() const noexcept { return active_; }

 private:
  CorruptionMode mode_;
  CorruptionTrigger trigger_;
  int start_step_;
  bool active_ = false;
  std::vector<double> held_;
};

// ---------------------------------------------------------------- scenarios

enum class ScenarioKind { none, runtime_perturbation, repositioning, corruption };

/// runtime_perturbation: before the action of step `step` the target jumps to
/// a fresh uniform draw in its region. repositioning: the target is redrawn
/// from an independent stream right after reset. corruption: observations
/// pass through a SensorCorruption.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::none;
  int step = 0;
  CorruptionMode corruption;
  CorruptionTrigger trigger = CorruptionTrigger::always;

  // Throws ConfigError for step >= max_steps or an unknown modality.
  void validate(const EnvSpec& env) const;
  std::string describe() const;
};

// "none", "perturb:<step>", "reposition",
// "corrupt:<zero|freeze|gaussian=<sigma>>:<modality>[:always|:occluded|:at=<step>]"
ScenarioSpec parse_scenario(std::string_view text);

// ---------------------------------------------------------------- rollouts

struct EpisodeResult {
  bool success = false;
  int steps = 0;  // steps taken; the mean-steps metric counts failures at max_steps
  std::vector<EnvState> states;  // state before each step, then the final state
  std::vector<std::vector<double>> actions;
};

// Called at every step with the observation the actor saw and a copy of the
// policy generator as it was before the step's action was computed.
using StepProbe = std::function<void(int t, const EnvState& state, const Observation& obs,
                                     const std::vector<double>& action, const Rng& policy_rng_before)>;

// Episode j of a seeded evaluation: environment stream
// Rng(stream_key(seed, j)).split(0), policy stream .split(1), scenario
// stream .split(2).
EpisodeResult run_episode(const EnvSpec& env, const Actor& actor, std::uint64_t seed, std::uint64_t episode,
                          const ScenarioSpec& scenario = {}, const StepProbe& probe = {});

struct EvalSummary {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_steps = 0.0;  // failures count as max_steps
  std::vector<EpisodeResult> results;
};

// n seeded episodes (run in parallel up to thread_count(), results in episode
// order). Throws ContractError for n == 0.
EvalSummary evaluate(const EnvSpec& env, const Actor& actor, std::size_t n, std::uint64_t seed,
                     const ScenarioSpec& scenario = {});
inline EvalSummary robustness_eval(const EnvSpec& env, const Actor& actor, const ScenarioSpec& scenario,
                                   std::size_t n, std::uint64_t seed) {
  return evaluate(env, actor, n, seed, scenario);
}

// ---------------------------------------------------------------- importance

// EMA(0) = raw(0), EMA(t) = alpha raw(t) + (1 - alpha) EMA(t - 1).
std::vector<double> ema(std::span<const double> raw, double alpha);

// Per-coordinate standard deviation of each modality over the dataset, times
// `scale`.
std::map<std::string, std::vector<double>> calibrate_sigma(const Dataset& ds, double scale = 0.1);

struct ImportanceConfig {
  // Per-coordinate noise scale for every probed modality.
  std::map<std::string, std::vector<double>> sigma;
  double alpha = 0.1;
  std::size_t draws = 1;  // averaged perturbation draws per (t, modality)
};

struct ImportanceTrace {
  std::vector<std::string> modalities;
  std::vector<std::vector<double>> raw;  // [modality][step]
  std::vector<std::vector<double>> ema;
  std::map<std::string, std::vector<double>> sigma;
  EpisodeResult episode;
};

// Rolls out the actor unperturbed and, at each step, measures
// ||a(m_i + delta) - a|| / (||a|| + 1e-8) with the same policy generator
// state. Perturbation noise comes from stream .split(3) of the episode and
// never reaches the environment. Throws ConfigError for a modality the
// environment does not have.
ImportanceTrace perturb_importance(const EnvSpec& env, const Actor& actor, std::uint64_t seed, std::uint64_t episode,
                                   const ImportanceConfig& cfg);

// CSV columns: step,modality,raw_importance,ema_importance
void write_importance_csv(std::ostream& out, const ImportanceTrace& trace, bool header = true);

// Worker count: MODALCOMPOSE_THREADS when set (>= 1), else the hardware count.
std::size_t thread_count();
// Runs body(i) for i in [0, n) on up to thread_count() threads. The first
// exception thrown is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace modalcompose
