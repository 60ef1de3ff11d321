#include "modalcompose/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool has_modality(const EnvSpec& env, const std::string& name) {
  for (const auto& m : env.modalities()) {
    if (m.name == name) return true;
  }
  return false;
}

int parse_int(std::string_view text, const char* what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string("invalid ") + what + " '" + std::string(text) + "'");
  }
  return value;
}

double parse_double(std::string_view text, const char* what) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Moves the goal(s) of the current stage to a fresh draw from `rng`.
void redraw_targets(const EnvSpec& env, EnvState& s, Rng& rng) {
  const EnvState fresh = env_reset(env, rng).state;
  if (env.kind == EnvKind::occluded_reach) {
    s.target = fresh.target;
    s.approach_side = approach_side_for(env, s.agent, s.target);
  } else if (s.stage == 0) {
    s.target = fresh.target;
    s.waypoint2 = fresh.waypoint2;
  } else {
    s.waypoint2 = fresh.waypoint2;
  }
}

}  // namespace

// ---------------------------------------------------------------- actors

PolicyActor::PolicyActor(std::shared_ptr<const Policy> policy) : policy_(std::move(policy)) {
  if (!policy_) throw ContractError("PolicyActor: null policy");
}

std::vector<double> PolicyActor::act(const EnvState&, const Observation& obs, Rng& rng) const {
  return policy_->act(obs, rng);
}

std::vector<double> ScriptedActor::act(const EnvState& state, const Observation&, Rng& rng) const {
  return scripted_expert(state, spec_, rng);
}

std::vector<double> RandomActor::act(const EnvState&, const Observation&, Rng& rng) const {
  std::vector<double> a(dim_);
  for (auto& v : a) v = rng.uniform(-1.0, 1.0);
  return a;
}

// ---------------------------------------------------------------- corruption

Observation corrupt_modality(const Observation& obs, const CorruptionMode& mode, Rng& rng,
                             std::span<const double> held) {
  Observation out = obs;
  auto& v = out.modality(mode.modality);
  switch (mode.kind) {
    case CorruptionKind::zero:
      std::fill(v.begin(), v.end(), 0.0);
      break;
    case CorruptionKind::freeze:
      if (held.size() != v.size()) throw ContractError("freeze corruption: held reading has the wrong dimension");
      std::copy(held.begin(), held.end(), v.begin());
      break;
    case CorruptionKind::gaussian:
      if (mode.sigma < 0.0) throw ContractError("gaussian corruption: sigma must be >= 0");
      for (auto& x : v) x += mode.sigma * rng.normal();
      break;
  }
  return out;
}

SensorCorruption::SensorCorruption(CorruptionMode mode, CorruptionTrigger trigger, int start_step)
    : mode_(std::move(mode)), trigger_(trigger), start_step_(start_step) {}

Observation SensorCorruption::apply(const Observation& obs, const EnvState& state, const EnvSpec& spec, Rng& rng) {
  if (!active_) {
    switch (trigger_) {
      case CorruptionTrigger::always:
        active_ = true;
        break;
      case CorruptionTrigger::at_step:
        active_ = state.t >= start_step_;
        break;
      case CorruptionTrigger::on_occlusion:
        active_ = spec.occlusion.contains(state.agent);
        break;
    }
    if (active_) held_ = obs.modality(mode_.modality);
  }
  if (!active_) {
    (void)obs.modality(mode_.modality);
    return obs;
  }
  return corrupt_modality(obs, mode_, rng, held_);
}

// ---------------------------------------------------------------- scenarios

void ScenarioSpec::validate(const EnvSpec& env) const {
  if (kind == ScenarioKind::runtime_perturbation && (step < 0 || step >= env.max_steps)) {
    throw ConfigError("perturbation step must lie in [0, max_steps)");
  }
  if (kind == ScenarioKind::corruption) {
    if (!has_modality(env, corruption.modality)) {
      throw ConfigError("corruption names unknown modality '" + corruption.modality + "'");
    }
    if (corruption.kind == CorruptionKind::gaussian && !(corruption.sigma >= 0.0)) {
      throw ConfigError("gaussian corruption sigma must be >= 0");
    }
    if (trigger == CorruptionTrigger::at_step && step < 0) throw ConfigError("corruption step must be >= 0");
  }
}

std::string ScenarioSpec::describe() const {
  switch (kind) {
    case ScenarioKind::none:
      return "none";
    case ScenarioKind::runtime_perturbation:
      return "perturb:" + std::to_string(step);
    case ScenarioKind::repositioning:
      return "reposition";
    case ScenarioKind::corruption: {
      std::string s = "corrupt:";
      if (corruption.kind == CorruptionKind::zero) s += "zero";
      if (corruption.kind == CorruptionKind::freeze) s += "freeze";
      if (corruption.kind == CorruptionKind::gaussian) s += "gaussian=" + std::to_string(corruption.sigma);
      s += ":" + corruption.modality;
      if (trigger == CorruptionTrigger::always) s += ":always";
      if (trigger == CorruptionTrigger::on_occlusion) s += ":occluded";
      if (trigger == CorruptionTrigger::at_step) s += ":at=" + std::to_string(step);
      return s;
    }
  }
  return "none";
}

ScenarioSpec parse_scenario(std::string_view text) {
  const auto parts = split(text, ':');
  ScenarioSpec s;
  const auto head = parts[0];
  if (head == "none" && parts.size() == 1) return s;
  if (head == "reposition" && parts.size() == 1) {
    s.kind = ScenarioKind::repositioning;
    return s;
  }
  if (head == "perturb" && parts.size() == 2) {
    s.kind = ScenarioKind::runtime_perturbation;
    s.step = parse_int(parts[1], "perturbation step");
    return s;
  }
  if (head == "corrupt" && (parts.size() == 3 || parts.size() == 4)) {
    s.kind = ScenarioKind::corruption;
    const auto mode = parts[1];
    if (mode == "zero") {
      s.corruption.kind = CorruptionKind::zero;
    } else if (mode == "freeze") {
      s.corruption.kind = CorruptionKind::freeze;
    } else if (mode.starts_with("gaussian=")) {
      s.corruption.kind = CorruptionKind::gaussian;
      s.corruption.sigma = parse_double(mode.substr(9), "corruption sigma");
    } else {
      throw ConfigError("unknown corruption mode '" + std::string(mode) + "'");
    }
    s.corruption.modality = std::string(parts[2]);
    if (parts.size() == 4) {
      const auto trig = parts[3];
      if (trig == "always") {
        s.trigger = CorruptionTrigger::always;
      } else if (trig == "occluded") {
        s.trigger = CorruptionTrigger::on_occlusion;
      } else if (trig.starts_with("at=")) {
        s.trigger = CorruptionTrigger::at_step;
        s.step = parse_int(trig.substr(3), "corruption step");
      } else {
        throw ConfigError("unknown corruption trigger '" + std::string(trig) + "'");
      }
    }
    return s;
  }
  throw ConfigError("cannot parse scenario '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- rollouts

EpisodeResult run_episode(const EnvSpec& env, const Actor& actor, std::uint64_t seed, std::uint64_t episode,
                          const ScenarioSpec& scenario, const StepProbe& probe) {
  scenario.validate(env);
  const Rng root(stream_key(seed, episode));
  Rng env_rng = root.split(0);
  Rng policy_rng = root.split(1);
  Rng scenario_rng = root.split(2);

  EnvReset reset = env_reset(env, env_rng);
  EnvState state = reset.state;
  if (scenario.kind == ScenarioKind::repositioning) redraw_targets(env, state, scenario_rng);
  Observation raw_obs = observe(env, state);

  std::optional<SensorCorruption> corruption;
  if (scenario.kind == ScenarioKind::corruption) {
    corruption.emplace(scenario.corruption, scenario.trigger, scenario.step);
  }

  EpisodeResult result;
  std::vector<double> queue;
  std::size_t next = 0;
  const std::size_t adim = env.action_dim();
  while (!state.done) {
    if (scenario.kind == ScenarioKind::runtime_perturbation && state.t == scenario.step) {
      redraw_targets(env, state, scenario_rng);
      raw_obs = observe(env, state);
    }
    const Observation obs = corruption ? corruption->apply(raw_obs, state, env, scenario_rng) : raw_obs;
    const Rng before = policy_rng;
    if (next >= queue.size()) {
      queue = actor.act(state, obs, policy_rng);
      if (queue.empty() || queue.size() % adim != 0) throw ShapeError("actor returned a malformed action chunk");
      next = 0;
    }
    std::vector<double> action(queue.begin() + static_cast<std::ptrdiff_t>(next),
                               queue.begin() + static_cast<std::ptrdiff_t>(next + adim));
    next += adim;
    if (probe) probe(state.t, state, obs, action, before);
    result.states.push_back(state);
    const Transition tr = env_step(env, state, action);
    result.actions.push_back(std::move(action));
    state = tr.state;
    raw_obs = tr.obs;
  }
  result.states.push_back(state);
  result.success = state.success;
  result.steps = state.t;
  return result;
}

EvalSummary evaluate(const EnvSpec& env, const Actor& actor, std::size_t n, std::uint64_t seed,
                     const ScenarioSpec& scenario) {
  if (n == 0) throw ContractError("evaluation needs at least one episode");
  scenario.validate(env);
  EvalSummary summary;
  summary.episodes = n;
  summary.results.resize(n);
  parallel_for(n, [&](std::size_t j) { summary.results[j] = run_episode(env, actor, seed, j, scenario); });
  double steps = 0.0;
  for (const auto& r : summary.results) {
    if (r.success) ++summary.successes;
    steps += r.success ? r.steps : env.max_steps;
  }
  summary.success_rate = static_cast<double>(summary.successes) / static_cast<double>(n);
  summary.mean_steps = steps / static_cast<double>(n);
  return summary;
}

// ---------------------------------------------------------------- importance

std::vector<double> ema(std::span<const double> raw, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("EMA alpha must lie in (0, 1]");
  std::vector<double> out(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    out[t] = t == 0 ? raw[0] : alpha * raw[t] + (1.0 - alpha) * out[t - 1];
  }
  return out;
}

std::map<std::string, std::vector<double>> calibrate_sigma(const Dataset& ds, double scale) {
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
    const auto& info = ds.modalities[i];
    std::vector<double> sum(info.dim, 0.0), sum_sq(info.dim, 0.0);
    std::size_t count = 0;
    for (const auto& ep : ds.episodes) {
      for (const auto& st : ep.steps) {
        const auto& v = st.obs.modality(info.name);
        for (std::size_t c = 0; c < info.dim; ++c) {
          sum[c] += v[c];
          sum_sq[c] += v[c] * v[c];
        }
        ++count;
      }
    }
    std::vector<double> sigma(info.dim, 0.0);
    if (count > 0) {
      for (std::size_t c = 0; c < info.dim; ++c) {
        const double mean = sum[c] / count;
        const double var = std::max(0.0, sum_sq[c] / count - mean * mean);
        sigma[c] = scale * std::sqrt(var);
      }
    }
    out[info.name] = std::move(sigma);
  }
  return out;
}

ImportanceTrace perturb_importance(const EnvSpec& env, const Actor& actor, std::uint64_t seed, std::uint64_t episode,
                                   const ImportanceConfig& cfg) {
  if (cfg.draws == 0) throw ConfigError("importance probing needs at least one draw");
  ImportanceTrace trace;
  for (const auto& [name, sigma] : cfg.sigma) {
    bool found = false;
    for (const auto& m : env.modalities()) {
      if (m.name != name) continue;
      found = true;
      if (sigma.size() != m.dim) throw ConfigError("sigma for modality '" + name + "' has the wrong dimension");
    }
    if (!found) throw ConfigError("importance config names unknown modality '" + name + "'");
    trace.modalities.push_back(name);
  }
  trace.sigma = cfg.sigma;
  trace.raw.assign(trace.modalities.size(), {});

  Rng noise_rng = Rng(stream_key(seed, episode)).split(3);
  const StepProbe probe = [&](int, const EnvState& state, const Observation& obs, const std::vector<double>&,
                              const Rng& before) {
    Rng orig_rng = before;
    const std::vector<double> a = actor.act(state, obs, orig_rng);
    const double denom = norm2(a) + 1e-8;
    for (std::size_t i = 0; i < trace.modalities.size(); ++i) {
      const auto& name = trace.modalities[i];
      const auto& sigma = trace.sigma.at(name);
      double total = 0.0;
      for (std::size_t d = 0; d < cfg.draws; ++d) {
        Observation perturbed = obs;
        auto& v = perturbed.modality(name);
        for (std::size_t c = 0; c < v.size(); ++c) v[c] += sigma[c] * noise_rng.normal();
        Rng pert_rng = before;
        const std::vector<double> b = actor.act(state, perturbed, pert_rng);
        double diff = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) diff += (b[c] - a[c]) * (b[c] - a[c]);
        total += std::sqrt(diff) / denom;
      }
      trace.raw[i].push_back(total / static_cast<double>(cfg.draws));
    }
  };
  trace.episode = run_episode(env, actor, seed, episode, {}, probe);
  for (const auto& raw : trace.raw) trace.ema.push_back(ema(raw, cfg.alpha));
  return trace;
}

void write_importance_csv(std::ostream& out, const ImportanceTrace& trace, bool header) {
  if (header) out << "step,modality,raw_importance,ema_importance\n";
  const std::size_t steps = trace.raw.empty() ? 0 : trace.raw[0].size();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < trace.modalities.size(); ++i) {
      out << t << ',' << trace.modalities[i] << ',' << trace.raw[i][t] << ',' << trace.ema[i][t] << '\n';
    }
  }
}

// ---------------------------------------------------------------- threading

std::size_t thread_count() {
  if (const char* env = std::getenv("MODALCOMPOSE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace modalcompose
