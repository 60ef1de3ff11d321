// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. Pass criterion ids (e.g. AC-3) as
// arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "modalcompose/analysis.hpp"
#include "modalcompose/checkpoint.hpp"
#include "modalcompose/config.hpp"
#include "modalcompose/harness.hpp"
#include "modalcompose/optim.hpp"
#include "test_support.hpp"

using namespace modalcompose;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const EnvSpec kEnv = EnvSpec::defaults(EnvKind::occluded_reach);
constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr std::size_t kDemos = 100;
constexpr std::size_t kEvalEpisodes = 100;
constexpr std::uint64_t kEvalSeedOffset = 10000;

// ------------------------------------------------------------------ AC-1

Outcome composition_identity() {
  Rng rng(11);
  auto shape = modalcompose::testing::small_shape("vis", 5);
  shape.config = ExpertConfig{};
  auto tac_shape = shape;
  tac_shape.modality = "tac";
  tac_shape.modality_dim = 3;
  const std::vector<ExpertRef> experts{std::make_shared<const ModalityExpert>(shape, rng),
                                       std::make_shared<const ModalityExpert>(tac_shape, rng)};
  const auto twin = std::make_shared<const ModalityExpert>(shape, rng);
  const std::vector<ExpertRef> twins{twin, twin};
  std::size_t onehot_mismatch = 0;
  double uniform_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto state = env_reset(kEnv, rng).state;
    state.agent = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto obs = observe(kEnv, state);
    const std::vector<double> a{rng.normal(), rng.normal()};
    const int k = rng.uniform_int(1, 50);
    const auto emb = encode_all(experts, obs);
    for (std::size_t i = 0; i < 2; ++i) {
      ConsensusWeights w{{0.0, 0.0}};
      w.w[i] = 1.0;
      if (inter_compose(experts, w, a, obs, k) != experts[i]->intra_compose(a, emb[i], k)) ++onehot_mismatch;
    }
    const auto single = twin->intra_compose(a, twin->encode(obs.modality("vis"), obs.robot_state), k);
    const auto both = inter_compose(twins, ConsensusWeights{{0.5, 0.5}}, a, obs, k);
    for (std::size_t c = 0; c < 2; ++c) uniform_err = std::max(uniform_err, std::abs(both[c] - single[c]));
  }
  return {onehot_mismatch == 0 && uniform_err <= 1e-12,
          fmt("one-hot mismatches=%zu/200, uniform-identical max err=%.3g (tol 1e-12)", onehot_mismatch, uniform_err)};
}

// ------------------------------------------------------------------ AC-2

Outcome gradient_correctness() {
  Rng rng(22);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    MlpSpec spec;
    spec.input_dim = 1 + rng.uniform_int(0, 5);
    for (int l = rng.uniform_int(1, 3); l > 0; --l) spec.hidden_widths.push_back(1 + rng.uniform_int(0, 7));
    spec.output_dim = 1 + rng.uniform_int(0, 3);
    spec.activation = trial % 2 ? Activation::relu : Activation::tanh;
    const Mlp mlp("m.", spec);
    ParamSet p;
    mlp.init(p, rng);
    for (const auto& n : p.names()) {
      for (auto& v : p.value(n).data()) v += 0.1 * rng.normal();
    }
    Tensor x({static_cast<std::size_t>(1 + rng.uniform_int(0, 3)), spec.input_dim});
    for (auto& v : x.data()) v = rng.normal();
    Graph g;
    const Var y = mlp.forward(g, p, g.constant(x));
    g.backward(g.scale(g.sum(g.mul(y, y)), 0.5), p);
    const auto fd = finite_diff_grad(
        [&](const ParamSet& q) {
          const Tensor y = mlp.forward(q, x);
          double s = 0.0;
          for (double v : y.data()) s += v * v;
          return 0.5 * s;
        },
        p, 1e-6);
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (const auto& n : p.names()) {
      for (std::size_t i = 0; i < p.grad(n).size(); ++i) {
        const double a = p.grad(n)[i], f = fd.at(n)[i];
        diff += (a - f) * (a - f);
        na += a * a;
        nf += f * f;
      }
    }
    worst = std::max(worst, std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nf) + 1e-300));
  }
  return {worst <= 1e-6, fmt("worst relative error over 50 MLPs=%.3g (tol 1e-6)", worst)};
}

// ------------------------------------------------------------------ AC-3

Outcome diffusion_recovery() {
  const std::vector<double> target{0.3, -0.2};
  const Dataset ds = modalcompose::testing::constant_action_dataset(target, 20);
  DiffusionConfig diffusion;
  diffusion.horizon = 1;
  Rng rng(34);
  TrainConfig train;
  train.steps = 2000;
  const auto trained = train_expert(ds, "a", ExpertConfig{}, diffusion, train, rng);
  const auto expert = std::make_shared<const ModalityExpert>(trained.expert);
  const auto policy = manual_compose({expert}, std::vector<double>{1.0}, diffusion.schedule(), ds.norm);
  const auto& obs = ds.episodes[0].steps[0].obs;
  std::vector<double> xs, ys;
  Rng sampler(35);
  for (int i = 0; i < 500; ++i) {
    const auto a = policy.act(obs, sampler);
    xs.push_back(a[0]);
    ys.push_back(a[1]);
  }
  const auto sd = [](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  const double ex = std::abs(mean(xs) - target[0]), ey = std::abs(mean(ys) - target[1]);
  const double sx = sd(xs), sy = sd(ys);
  return {ex <= 0.05 && ey <= 0.05 && sx <= 0.15 && sy <= 0.15,
          fmt("mean error (%.4f, %.4f) tol 0.05; std (%.4f, %.4f) tol 0.15", ex, ey, sx, sy)};
}

// ------------------------------------------------------------------ shared runs

struct SeedRun {
  std::uint64_t seed = 0;
  Dataset ds;
  TrainedModels models;
  std::map<std::string, EvalSummary> eval;
  std::shared_ptr<const ComposedPolicy> composed;
};

std::vector<SeedRun>& seed_runs() {
  static std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t seed : kSeeds) {
      const auto t0 = std::chrono::steady_clock::now();
      RunConfig cfg;
      cfg.env = kEnv;
      cfg.seed = seed;
      cfg.data_episodes = kDemos;
      SeedRun r;
      r.seed = seed;
      r.ds = prepare_dataset(cfg);
      r.models = train_models(cfg, r.ds, cfg.resolved_methods());
      r.composed = composed_policy(r.models, RoutingStrategy::soft);
      const std::uint64_t es = kEvalSeedOffset + seed;
      const auto run = [&](const std::string& name, std::shared_ptr<const Policy> p) {
        r.eval[name] = evaluate(kEnv, PolicyActor(std::move(p)), kEvalEpisodes, es);
      };
      run("composed", r.composed);
      run("equal", fixed_policy(r.models, {0.5, 0.5}));
      run("vis", fixed_policy(r.models, {1.0, 0.0}));
      run("tac", fixed_policy(r.models, {0.0, 1.0}));
      run("concat", std::make_shared<const ConcatPolicy>(*r.models.concat));
      run("moe", std::make_shared<const MoEFeaturePolicy>(*r.models.moe));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("  seed %llu (%.0fs):", static_cast<unsigned long long>(seed), secs);
      for (const auto& [k, v] : r.eval) std::printf(" %s=%.2f", k.c_str(), v.success_rate);
      std::printf("\n");
      std::fflush(stdout);
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

double mean_rate(const std::string& method) {
  std::vector<double> v;
  for (const auto& r : seed_runs()) v.push_back(r.eval.at(method).success_rate);
  return mean(v);
}

// ------------------------------------------------------------------ AC-4

Outcome sparsity_advantage() {
  const double composed = mean_rate("composed"), concat = mean_rate("concat");
  const double best_single = std::max(mean_rate("vis"), mean_rate("tac"));
  return {composed >= concat + 0.10 && composed > best_single,
          fmt("composed=%.3f concat=%.3f (need >= concat+0.10) best single=%.3f (need >)", composed, concat,
              best_single)};
}

// ------------------------------------------------------------------ AC-5

Outcome importance_shift() {
  const auto& run = seed_runs().front();
  const PolicyActor actor(run.composed);
  ImportanceConfig cfg;
  cfg.sigma = calibrate_sigma(run.ds);
  double tac_contact = 0.0, tac_pre = 0.0, vis_pre = 0.0;
  std::size_t n_contact = 0, n_pre = 0, used = 0;
  for (std::uint64_t j = 0; used < 20 && j < 60; ++j) {
    const auto trace = perturb_importance(kEnv, actor, kEvalSeedOffset + run.seed, j, cfg);
    if (!trace.episode.success) continue;
    ++used;
    const auto idx = [&](const std::string& m) {
      return std::find(trace.modalities.begin(), trace.modalities.end(), m) - trace.modalities.begin();
    };
    const auto& tac = trace.ema[idx("tac")];
    const auto& vis = trace.ema[idx("vis")];
    bool entered = false;
    for (std::size_t t = 0; t < tac.size(); ++t) {
      const auto& s = trace.episode.states[t];
      entered = entered || kEnv.occlusion.contains(s.agent);
      if (!entered) {
        tac_pre += tac[t];
        vis_pre += vis[t];
        ++n_pre;
      }
      if (std::hypot(s.agent[0] - s.target[0], s.agent[1] - s.target[1]) <= kEnv.contact_radius) {
        tac_contact += tac[t];
        ++n_contact;
      }
    }
  }
  if (used < 20 || n_pre == 0 || n_contact == 0) {
    return {false, fmt("only %zu successful episodes (%zu pre-occlusion, %zu contact steps)", used, n_pre, n_contact)};
  }
  tac_contact /= n_contact;
  tac_pre /= n_pre;
  vis_pre /= n_pre;
  return {tac_contact >= 2.0 * tac_pre && vis_pre >= tac_pre,
          fmt("%zu episodes: tac contact=%.4f vs pre=%.4f (ratio %.2f, need >= 2); vis pre=%.4f (need >= tac pre)", used,
              tac_contact, tac_pre, tac_contact / std::max(tac_pre, 1e-300), vis_pre)};
}

// ------------------------------------------------------------------ AC-6

Outcome incremental_composition() {
  std::string detail;
  bool pass = true;
  for (const auto& r : seed_runs()) {
    const double equal = r.eval.at("equal").success_rate;
    const double best = std::max(r.eval.at("vis").success_rate, r.eval.at("tac").success_rate);
    pass = pass && equal > best;
    detail += fmt("seed %llu: (0.5,0.5)=%.2f best single=%.2f; ", static_cast<unsigned long long>(r.seed), equal, best);
  }
  return {pass, detail + "need > on every seed"};
}

// ------------------------------------------------------------------ AC-7

Outcome router_vs_equal() {
  const double router = mean_rate("composed"), equal = mean_rate("equal"), moe = mean_rate("moe");
  int wins = 0;
  for (const auto& r : seed_runs()) wins += r.eval.at("composed").success_rate > r.eval.at("equal").success_rate;
  const bool pass = router >= equal - 0.02 && wins >= 2 && router >= moe - 0.02 && equal >= moe - 0.02;
  return {pass, fmt("router=%.3f equal=%.3f moe=%.3f; router > equal on %d/3 seeds", router, equal, moe, wins)};
}

// ------------------------------------------------------------------ AC-8

Outcome routing_strategies() {
  const auto& r = seed_runs().front();
  const std::uint64_t es = kEvalSeedOffset + r.seed;
  const std::size_t n = 20;
  std::map<RoutingStrategy, EvalSummary> runs;
  bool valid = true;
  for (auto s : {RoutingStrategy::soft, RoutingStrategy::hard, RoutingStrategy::top2}) {
    const auto policy = composed_policy(r.models, s);
    runs[s] = evaluate(kEnv, PolicyActor(policy), n, es);
    valid = valid && runs[s].episodes == n && runs[s].success_rate >= 0.0 && runs[s].success_rate <= 1.0;
    for (const auto& res : runs[s].results) {
      for (std::size_t t = 0; t + 1 < res.states.size(); t += 7) {
        policy->weights(observe(kEnv, res.states[t])).validate();
      }
    }
  }
  bool identical = runs[RoutingStrategy::soft].success_rate == runs[RoutingStrategy::top2].success_rate &&
                   runs[RoutingStrategy::soft].mean_steps == runs[RoutingStrategy::top2].mean_steps;
  for (std::size_t j = 0; j < n; ++j) {
    identical = identical && runs[RoutingStrategy::soft].results[j].actions == runs[RoutingStrategy::top2].results[j].actions;
  }
  // Saturated router: hard routing against the favoured expert sampled alone.
  Router saturated = *r.models.router;
  for (const auto& name : saturated.params().names()) saturated.params().value(name).fill(0.0);
  saturated.params().value(r.models.router->spec().hidden_widths.empty() ? "router.l0.b" : "router.l1.b").values() = {
      0.0, 25.0};
  const auto hard = compose_policy(r.models.expert_refs(), std::make_shared<const Router>(saturated),
                                   RoutingStrategy::hard, r.models.context.diffusion.schedule(), r.models.context.norm);
  const auto alone = manual_compose({r.models.expert_refs()[1]}, std::vector<double>{1.0},
                                    r.models.context.diffusion.schedule(), r.models.context.norm);
  const auto obs = r.ds.episodes[0].steps.back().obs;
  std::vector<double> hx, hy, ax, ay;
  for (int i = 0; i < 500; ++i) {
    Rng r1(stream_key(88, i)), r2(stream_key(88, i));
    const auto a = hard.act(obs, r1), b = alone.act(obs, r2);
    hx.push_back(a[0]);
    hy.push_back(a[1]);
    ax.push_back(b[0]);
    ay.push_back(b[1]);
  }
  const double ks = std::max(modalcompose::testing::ks_statistic(hx, ax), modalcompose::testing::ks_statistic(hy, ay));
  return {valid && identical && ks < 0.1,
          fmt("soft/hard/top2 success %.2f/%.2f/%.2f; top2==soft bit-identical: %s; saturated hard KS=%.3f (tol 0.1)",
              runs[RoutingStrategy::soft].success_rate, runs[RoutingStrategy::hard].success_rate,
              runs[RoutingStrategy::top2].success_rate, identical ? "yes" : "no", ks)};
}

// ------------------------------------------------------------------ AC-9

struct PipelineFiles {
  std::map<std::string, std::string> bytes;
};

PipelineFiles pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg = parse_run_config(
      "[data]\nepisodes = 12\n[expert]\nencoder_hidden = 16\ncode_dim = 8\nscore_hidden = 32,32\n"
      "[train]\nsteps = 40\nbatch = 16\nrouter_steps = 20\n[eval]\nepisodes = 6\n[run]\nseed = 5\n",
      "acceptance");
  write_dataset(generate_dataset(cfg.env, cfg.data_episodes, cfg.seed), dir / "data.mcds");
  cfg.data_path = (dir / "data.mcds").string();
  run_training(cfg, prepare_dataset(cfg), dir / "run");
  MetricsTable table;
  for (const auto& e : fs::directory_iterator(dir / "run")) {
    if (e.path().extension() == ".manifest") {
      table.rows.push_back(run_eval(read_manifest(e.path()), cfg.env, cfg.eval_episodes, cfg.seed));
    }
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const MetricsRow& a, const MetricsRow& b) { return a.method < b.method; });
  table.save(dir / "metrics.csv");
  PipelineFiles out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.bytes[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

Outcome determinism_and_persistence() {
  const auto base = fs::temp_directory_path() / ("modalcompose_acceptance_" + std::to_string(::getpid()));
  const auto a = pipeline(base / "a");
  const auto b = pipeline(base / "b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a.bytes) {
    const auto it = b.bytes.find(name);
    if (it == b.bytes.end() || it->second != bytes) ++differing;
  }
  differing += a.bytes.size() != b.bytes.size();
  // Lossless round trip of every checkpoint.
  std::size_t lossy = 0, checkpoints = 0;
  for (const auto& [name, bytes] : a.bytes) {
    if (!name.ends_with(".ckpt")) continue;
    ++checkpoints;
    const auto ckpt = load_checkpoint(base / "a" / name);
    const auto re = encode_checkpoint(ckpt);
    if (std::string(re.begin(), re.end()) != bytes || decode_checkpoint(re) != ckpt) ++lossy;
  }
  const std::size_t files = a.bytes.size();
  fs::remove_all(base);
  return {differing == 0 && lossy == 0 && checkpoints >= 5,
          fmt("%zu files compared, %zu differ; %zu checkpoints, %zu not lossless", files, differing, checkpoints, lossy)};
}

// ------------------------------------------------------------------ AC-10

Outcome robustness_probes() {
  const auto scenario = parse_scenario("corrupt:zero:vis:occluded");
  std::vector<double> clean, corrupted;
  for (const auto& r : seed_runs()) {
    const PolicyActor actor(r.composed);
    clean.push_back(r.eval.at("composed").success_rate);
    corrupted.push_back(robustness_eval(kEnv, actor, scenario, kEvalEpisodes, kEvalSeedOffset + r.seed).success_rate);
  }
  const double drop = mean(clean) - mean(corrupted);
  // Probing must leave the driven trajectory untouched.
  const auto& r = seed_runs().front();
  const PolicyActor actor(r.composed);
  ImportanceConfig cfg;
  cfg.sigma = calibrate_sigma(r.ds);
  std::size_t mismatches = 0;
  for (std::uint64_t j = 0; j < 5; ++j) {
    const auto trace = perturb_importance(kEnv, actor, kEvalSeedOffset + r.seed, j, cfg);
    const auto plain = run_episode(kEnv, actor, kEvalSeedOffset + r.seed, j);
    mismatches += trace.episode.states != plain.states || trace.episode.actions != plain.actions;
  }
  return {drop <= 0.15 && mismatches == 0,
          fmt("clean=%.3f corrupted=%.3f drop=%.3f (tol 0.15); probed trajectories differing: %zu/5", mean(clean),
              mean(corrupted), drop, mismatches)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC-1", composition_identity},       {"AC-2", gradient_correctness},   {"AC-3", diffusion_recovery},
      {"AC-4", sparsity_advantage},         {"AC-5", importance_shift},       {"AC-6", incremental_composition},
      {"AC-7", router_vs_equal},            {"AC-8", routing_strategies},     {"AC-9", determinism_and_persistence},
      {"AC-10", robustness_probes},
  };
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1fs) %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
