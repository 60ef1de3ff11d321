#include "modalcompose/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "modalcompose/binary_io.hpp"
#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace fs = std::filesystem;

namespace {

Rng method_rng(std::uint64_t seed, const std::string& method) { return Rng(stream_key(seed, fnv1a(method))); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join_weights(const std::vector<double>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + fmt("%.17g", w[i]);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_loss_csv(const fs::path& path, const std::vector<double>& loss) {
  std::string text = "step,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) text += std::to_string(i) + "," + fmt("%.17g", loss[i]) + "\n";
  write_text(path, text);
}

ExpertShape expert_shape(const Dataset& ds, const std::string& modality, const RunConfig& cfg) {
  ExpertShape s;
  s.modality = modality;
  s.modality_dim = ds.modality(modality).dim;
  s.robot_state_dim = ds.robot_state_dim;
  s.chunk_dim = ds.action_dim * cfg.diffusion.horizon;
  s.denoise_steps = cfg.diffusion.steps;
  s.config = cfg.expert;
  return s;
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  const fs::path rel = fs::relative(fs::absolute(p), base.empty() ? fs::current_path() : fs::absolute(base), ec);
  return ec || rel.empty() ? p.generic_string() : rel.generic_string();
}

void check_context(const RunContext& ctx, const EnvSpec& env, const Manifest& m) {
  if (ctx.env != env.name()) {
    throw ContractError("checkpoint was trained on '" + ctx.env + "' but evaluation uses '" + env.name() + "'");
  }
  if (!m.norm_hash.empty() && m.norm_hash != std::to_string(ctx.norm.hash())) {
    throw ContractError("manifest normalization hash does not match its checkpoints");
  }
}

}  // namespace

// ---------------------------------------------------------------- metrics

void MetricsTable::write_csv(std::ostream& out) const {
  out << "task,method,success_rate,mean_steps,param_count,seed\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.method << ',' << fmt("%.4f", r.success_rate) << ',' << fmt("%.3f", r.mean_steps) << ','
        << r.param_count << ',' << r.seed << '\n';
  }
}

std::string MetricsTable::to_csv() const {
  std::ostringstream ss;
  write_csv(ss);
  return ss.str();
}

void MetricsTable::save(const fs::path& path) const { write_text(path, to_csv()); }

MetricsRow metrics_row(const EnvSpec& env, const std::string& method, const EvalSummary& s, std::size_t params,
                       std::uint64_t seed) {
  return {env.name(), method, s.success_rate, s.mean_steps, params, seed};
}

// ---------------------------------------------------------------- training

const ModalityExpert* TrainedModels::expert(const std::string& modality) const {
  for (const auto& e : experts) {
    if (e.modality() == modality) return &e;
  }
  return nullptr;
}

std::vector<ExpertRef> TrainedModels::expert_refs() const {
  std::vector<ExpertRef> out;
  for (const auto& e : experts) out.push_back(std::make_shared<const ModalityExpert>(e));
  return out;
}

Dataset prepare_dataset(const RunConfig& cfg) {
  cfg.validate();
  Dataset ds = cfg.data_path.empty() ? generate_dataset(cfg.env, cfg.data_episodes, cfg.seed)
                                     : read_dataset(cfg.data_path);
  if (ds.env_name != cfg.env.name()) {
    throw ConfigError("dataset was recorded on '" + ds.env_name + "' but the config names '" + cfg.env.name() + "'");
  }
  const auto names = cfg.active_modalities();
  return ds.keep_modalities(names);
}

TrainedModels train_models(const RunConfig& cfg, const Dataset& ds, const std::vector<std::string>& methods,
                           const TrainedModels* prior) {
  cfg.validate();
  TrainedModels out;
  out.context = run_context(ds, cfg.diffusion);
  if (prior) {
    if (prior->context.compat_hash() != out.context.compat_hash()) {
      throw ContractError("previously trained experts were produced under different run settings");
    }
    out.experts = prior->experts;
  }

  std::vector<std::string> expert_methods;
  for (const auto& m : methods) {
    if (m.starts_with("expert:")) expert_methods.push_back(m);
  }
  std::vector<std::optional<ExpertTraining>> trained(expert_methods.size());
  parallel_for(expert_methods.size(), [&](std::size_t i) {
    Rng rng = method_rng(cfg.seed, expert_methods[i]);
    trained[i] = train_expert(ds, expert_methods[i].substr(7), cfg.expert, cfg.diffusion, cfg.train, rng);
  });
  for (std::size_t i = 0; i < trained.size(); ++i) {
    out.loss_history[expert_methods[i]] = trained[i]->loss_history;
    auto& ex = trained[i]->expert;
    const auto it = std::find_if(out.experts.begin(), out.experts.end(),
                                 [&](const ModalityExpert& e) { return e.modality() == ex.modality(); });
    if (it != out.experts.end()) {
      *it = std::move(ex);
    } else {
      out.experts.push_back(std::move(ex));
    }
  }
  // Keep the dataset's modality order.
  std::vector<ModalityExpert> ordered;
  for (const auto& info : ds.modalities) {
    if (const auto* e = out.expert(info.name)) ordered.push_back(*e);
  }
  out.experts = std::move(ordered);

  for (const auto& m : methods) {
    Rng rng = method_rng(cfg.seed, m);
    if (m == "router") {
      std::vector<std::string> names;
      std::vector<std::size_t> dims;
      for (const auto& info : ds.modalities) {
        names.push_back(info.name);
        dims.push_back(info.dim);
      }
      if (cfg.joint) {
        std::vector<ModalityExpert> fresh;
        std::vector<std::size_t> emb;
        for (const auto& n : names) {
          fresh.emplace_back(expert_shape(ds, n, cfg), rng);
          emb.push_back(fresh.back().embedding_dim());
        }
        Router router(names, emb, cfg.router, rng);
        TrainConfig tc = cfg.train;
        JointTraining jt = train_joint(std::move(fresh), std::move(router), ds, cfg.diffusion, tc, rng);
        out.experts = std::move(jt.experts);
        out.router = std::move(jt.router);
        out.loss_history[m] = std::move(jt.loss_history);
      } else {
        for (const auto& n : names) {
          if (!out.expert(n)) throw ContractError("router training needs a trained expert for modality '" + n + "'");
        }
        TrainConfig tc = cfg.train;
        tc.steps = cfg.router_steps;
        RouterTraining rt = train_router(out.experts, ds, cfg.router, cfg.diffusion, tc, rng);
        out.router = std::move(rt.router);
        out.loss_history[m] = std::move(rt.loss_history);
      }
    } else if (m == "concat") {
      ConcatTraining ct = train_concat_policy(ds, cfg.expert, cfg.diffusion, cfg.train, rng);
      out.concat = std::move(ct.policy);
      out.loss_history[m] = std::move(ct.loss_history);
    } else if (m == "moe") {
      MoETraining mt = train_moe_policy(ds, cfg.expert, cfg.diffusion, cfg.train, rng);
      out.moe = std::move(mt.policy);
      out.loss_history[m] = std::move(mt.loss_history);
    } else if (!m.starts_with("expert:")) {
      throw ConfigError("unknown method '" + m + "'");
    }
  }
  return out;
}

TrainingOutputs run_training(const RunConfig& cfg, const Dataset& ds, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto methods = cfg.resolved_methods();
  const auto expert_path = [&](const std::string& m) { return out_dir / ("expert_" + m + ".ckpt"); };

  std::optional<TrainedModels> prior;
  const bool wants_router = std::find(methods.begin(), methods.end(), "router") != methods.end();
  if (wants_router && !cfg.joint) {
    TrainedModels p;
    p.context = run_context(ds, cfg.diffusion);
    for (const auto& info : ds.modalities) {
      const bool trained_here =
          std::find(methods.begin(), methods.end(), "expert:" + info.name) != methods.end();
      if (trained_here || !fs::exists(expert_path(info.name))) continue;
      const Checkpoint c = load_checkpoint(expert_path(info.name));
      if (checkpoint_context(c).compat_hash() != p.context.compat_hash()) {
        throw ContractError("existing " + expert_path(info.name).string() +
                            " was trained under different run settings");
      }
      p.experts.push_back(load_expert(c));
    }
    prior = std::move(p);
  }
  const TrainedModels models = train_models(cfg, ds, methods, prior ? &*prior : nullptr);

  TrainingOutputs out;
  const auto& ctx = models.context;
  const bool joint_router = cfg.joint && models.router;
  for (const auto& e : models.experts) {
    const std::string method = "expert:" + e.modality();
    const bool trained_here = std::find(methods.begin(), methods.end(), method) != methods.end();
    if (!trained_here && !joint_router) continue;
    const fs::path p = expert_path(e.modality());
    save_checkpoint(expert_checkpoint(e, ctx), p);
    out.checkpoints.push_back(p);
    Manifest man;
    man.kind = "composed";
    man.experts = {p};
    man.weights = {1.0};
    man.method = method;
    man.norm_hash = std::to_string(ctx.norm.hash());
    const fs::path mp = out_dir / ("expert_" + e.modality() + ".manifest");
    write_manifest(man, mp);
    out.manifests.push_back(mp);
  }
  if (models.router) {
    const fs::path p = out_dir / "router.ckpt";
    save_checkpoint(router_checkpoint(*models.router, ctx), p);
    out.checkpoints.push_back(p);
    Manifest man;
    for (const auto& e : models.experts) man.experts.push_back(expert_path(e.modality()));
    man.router = p;
    man.strategy = cfg.strategy;
    man.norm_hash = std::to_string(ctx.norm.hash());
    write_manifest(man, out_dir / "composed.manifest");
    out.manifests.push_back(out_dir / "composed.manifest");
    Manifest eq;
    eq.experts = man.experts;
    eq.weights.assign(man.experts.size(), 1.0 / static_cast<double>(man.experts.size()));
    eq.method = "equal_weights";
    eq.norm_hash = man.norm_hash;
    write_manifest(eq, out_dir / "equal.manifest");
    out.manifests.push_back(out_dir / "equal.manifest");
  }
  if (models.concat) {
    const fs::path p = out_dir / "concat.ckpt";
    save_checkpoint(concat_checkpoint(*models.concat, ctx), p);
    out.checkpoints.push_back(p);
    Manifest man;
    man.kind = "concat";
    man.model = p;
    man.norm_hash = std::to_string(ctx.norm.hash());
    write_manifest(man, out_dir / "concat.manifest");
    out.manifests.push_back(out_dir / "concat.manifest");
  }
  if (models.moe) {
    const fs::path p = out_dir / "moe.ckpt";
    save_checkpoint(moe_checkpoint(*models.moe, ctx), p);
    out.checkpoints.push_back(p);
    Manifest man;
    man.kind = "moe";
    man.model = p;
    man.norm_hash = std::to_string(ctx.norm.hash());
    write_manifest(man, out_dir / "moe.manifest");
    out.manifests.push_back(out_dir / "moe.manifest");
  }
  for (const auto& [method, loss] : models.loss_history) {
    std::string name = method;
    std::replace(name.begin(), name.end(), ':', '_');
    const fs::path p = out_dir / ("loss_" + name + ".csv");
    write_loss_csv(p, loss);
    out.loss_files.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- manifests

std::string Manifest::label() const {
  if (!method.empty()) return method;
  if (kind != "composed") return kind;
  if (!router.empty()) return "composed:" + std::string(to_string(strategy));
  return "fixed:" + [&] {
    std::string s;
    for (std::size_t i = 0; i < weights.size(); ++i) s += (i ? "/" : "") + fmt("%g", weights[i]);
    return s;
  }();
}

Manifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  Manifest m;
  bool saw_kind = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "kind") {
      if (value != "composed" && value != "concat" && value != "moe" && value != "scripted" && value != "random") {
        throw ConfigError("manifest: unknown kind '" + value + "'");
      }
      m.kind = value;
      saw_kind = true;
    } else if (key == "expert") {
      m.experts.push_back(resolve(base_dir, value));
    } else if (key == "router") {
      m.router = resolve(base_dir, value);
    } else if (key == "weights") {
      m.weights = parse_double_list(value);
    } else if (key == "strategy") {
      m.strategy = parse_strategy(value);
    } else if (key == "model") {
      m.model = resolve(base_dir, value);
    } else if (key == "method") {
      m.method = value;
    } else if (key == "norm_hash") {
      m.norm_hash = value;
    } else {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!saw_kind) throw ConfigError("manifest lacks a kind= line");
  if (m.kind == "composed") {
    if (m.experts.empty()) throw ConfigError("composed manifest lists no experts");
    if (m.router.empty() == m.weights.empty()) {
      throw ConfigError("composed manifest needs exactly one of router= or weights=");
    }
  }
  if ((m.kind == "concat" || m.kind == "moe") && m.model.empty()) {
    throw ConfigError(m.kind + " manifest lacks model=");
  }
  return m;
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("manifest " + path.string() + " does not exist");
  return parse_manifest(read_text(path), path.parent_path());
}

void write_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::string text = "kind=" + m.kind + "\n";
  if (!m.method.empty()) text += "method=" + m.method + "\n";
  for (const auto& e : m.experts) text += "expert=" + relative_to(e, base) + "\n";
  if (!m.router.empty()) {
    text += "router=" + relative_to(m.router, base) + "\n";
    text += "strategy=" + std::string(to_string(m.strategy)) + "\n";
  }
  if (!m.weights.empty()) text += "weights=" + join_weights(m.weights) + "\n";
  if (!m.model.empty()) text += "model=" + relative_to(m.model, base) + "\n";
  if (!m.norm_hash.empty()) text += "norm_hash=" + m.norm_hash + "\n";
  if (!base.empty()) fs::create_directories(base);
  write_text(path, text);
}

LoadedPolicy load_policy(const Manifest& m, const EnvSpec& env) {
  LoadedPolicy out;
  out.method = m.label();
  if (m.kind == "scripted") {
    out.actor = std::make_shared<ScriptedActor>(env);
    return out;
  }
  if (m.kind == "random") {
    out.actor = std::make_shared<RandomActor>(env.action_dim());
    return out;
  }
  if (m.kind == "concat" || m.kind == "moe") {
    const Checkpoint c = load_checkpoint(m.model);
    const RunContext ctx = checkpoint_context(c);
    check_context(ctx, env, m);
    std::shared_ptr<const Policy> p;
    if (m.kind == "concat") {
      p = std::make_shared<ConcatPolicy>(load_concat(c));
    } else {
      p = std::make_shared<MoEFeaturePolicy>(load_moe(c));
    }
    out.actor = std::make_shared<PolicyActor>(p);
    out.param_count = p->param_count();
    out.context = ctx;
    return out;
  }
  std::vector<Checkpoint> ckpts;
  for (const auto& e : m.experts) ckpts.push_back(load_checkpoint(e));
  std::optional<Checkpoint> router_ckpt;
  if (!m.router.empty()) router_ckpt = load_checkpoint(m.router);
  std::vector<const Checkpoint*> all;
  for (const auto& c : ckpts) all.push_back(&c);
  if (router_ckpt) all.push_back(&*router_ckpt);
  check_compatible(all);
  const RunContext ctx = checkpoint_context(ckpts.front());
  check_context(ctx, env, m);
  std::vector<ExpertRef> experts;
  for (const auto& c : ckpts) experts.push_back(std::make_shared<const ModalityExpert>(load_expert(c)));
  const NoiseSchedule sched = ctx.diffusion.schedule();
  std::shared_ptr<const ComposedPolicy> policy;
  if (router_ckpt) {
    auto router = std::make_shared<const Router>(load_router(*router_ckpt));
    policy = std::make_shared<ComposedPolicy>(
        compose_policy(experts, router, m.strategy, sched, ctx.norm, ctx.diffusion.variance));
  } else {
    if (m.weights.size() != experts.size()) {
      throw ContractError("manifest lists " + std::to_string(experts.size()) + " experts but " +
                          std::to_string(m.weights.size()) + " weights");
    }
    policy = std::make_shared<ComposedPolicy>(
        manual_compose(experts, m.weights, sched, ctx.norm, ctx.diffusion.variance));
  }
  out.actor = std::make_shared<PolicyActor>(policy);
  out.param_count = policy->param_count();
  out.context = ctx;
  return out;
}

MetricsRow run_eval(const Manifest& m, const EnvSpec& env, std::size_t n, std::uint64_t seed,
                    const ScenarioSpec& scenario) {
  const LoadedPolicy p = load_policy(m, env);
  const EvalSummary s = evaluate(env, *p.actor, n, seed, scenario);
  std::string method = p.method;
  if (scenario.kind != ScenarioKind::none) method += "[" + scenario.describe() + "]";
  return metrics_row(env, method, s, p.param_count, seed);
}

// ---------------------------------------------------------------- policies

std::shared_ptr<const ComposedPolicy> composed_policy(const TrainedModels& m, RoutingStrategy strategy) {
  if (!m.router) throw ContractError("no trained router");
  return std::make_shared<ComposedPolicy>(compose_policy(m.expert_refs(), std::make_shared<const Router>(*m.router),
                                                         strategy, m.context.diffusion.schedule(), m.context.norm,
                                                         m.context.diffusion.variance));
}

std::shared_ptr<const ComposedPolicy> fixed_policy(const TrainedModels& m, const std::vector<double>& weights) {
  return std::make_shared<ComposedPolicy>(manual_compose(m.expert_refs(), weights, m.context.diffusion.schedule(),
                                                         m.context.norm, m.context.diffusion.variance));
}

// ---------------------------------------------------------------- sweep

MetricsTable sweep_dataset_size(const RunConfig& cfg, const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw ConfigError("sweep needs at least one dataset size");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ConfigError("dataset sizes must be >= 1");
    if (i > 0 && sizes[i] <= sizes[i - 1]) {
      throw ConfigError(sizes[i] == sizes[i - 1] ? "duplicate dataset size " + std::to_string(sizes[i])
                                                 : "dataset sizes must be ascending");
    }
  }
  cfg.validate();
  MetricsTable table;
  for (const auto size : sizes) {
    RunConfig c = cfg;
    c.data_episodes = size;
    c.data_path.clear();
    const Dataset ds = prepare_dataset(c);
    std::vector<std::string> methods;
    for (const auto& info : ds.modalities) methods.push_back("expert:" + info.name);
    methods.push_back("router");
    methods.push_back("concat");
    const TrainedModels models = train_models(c, ds, methods);
    const std::string task = c.env.name() + "[n=" + std::to_string(size) + "]";
    const auto composed = composed_policy(models, c.strategy);
    const auto concat = std::make_shared<const ConcatPolicy>(*models.concat);
    const EvalSummary ours = evaluate(c.env, PolicyActor(composed), c.eval_episodes, c.seed);
    const EvalSummary base = evaluate(c.env, PolicyActor(concat), c.eval_episodes, c.seed);
    table.rows.push_back({task, "composed", ours.success_rate, ours.mean_steps, composed->param_count(), c.seed});
    table.rows.push_back({task, "concat", base.success_rate, base.mean_steps, concat->param_count(), c.seed});
  }
  return table;
}

}  // namespace modalcompose
