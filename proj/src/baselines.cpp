#include "modalcompose/baselines.hpp"

#include "modalcompose/errors.hpp"
#include "modalcompose/optim.hpp"

namespace modalcompose {

namespace {

void check_layout(const ParamSet& expected, const ParamSet& got, const char* what) {
  if (expected.names() != got.names()) throw ShapeError(std::string(what) + ": parameter names do not match");
  for (const auto& name : expected.names()) {
    if (!expected.value(name).same_shape(got.value(name))) {
      throw ShapeError(std::string(what) + ": parameter '" + name + "' has the wrong shape");
    }
  }
}

struct ObsBatch {
  std::vector<Var> modalities;
  std::optional<Var> robot;
};

ObsBatch single_obs(Graph& graph, const FusionShape& shape, const Observation& obs) {
  ObsBatch b;
  for (const auto& m : shape.modalities) {
    const auto& v = obs.modality(m.name);
    if (v.size() != m.dim) throw ShapeError("modality '" + m.name + "' has the wrong dimension");
    b.modalities.push_back(graph.constant(Tensor::row(v)));
  }
  if (shape.robot_state_dim) {
    if (obs.robot_state.size() != shape.robot_state_dim) throw ShapeError("robot state has the wrong dimension");
    b.robot = graph.constant(Tensor::row(obs.robot_state));
  }
  return b;
}

// Samples with a fixed [1 x cond] conditioning row.
std::vector<double> sample_with(const Tensor& cond, std::size_t chunk, const NoiseSchedule& sched,
                                PosteriorVariance variance, std::size_t pairs, Rng& rng, const std::function<Var(Graph&, Var, Var, Var)>& eps) {
  ScoreFn score = [&](std::span<const double> noised, int k) {
    Graph g(false);
    const Var out = eps(g, g.constant(Tensor::row(noised)), g.constant(cond),
                        g.constant(Tensor::row(timestep_embedding(k, sched.steps(), pairs))));
    return g.value(out).values();
  };
  SamplerOptions opts;
  opts.variance = variance;
  return ddpm_sample(score, chunk, sched, rng, opts);
}

template <typename Model, typename CondFn>
std::vector<double> train_fusion(Model& model, const Dataset& ds, const DiffusionConfig& diffusion,
                                 const TrainConfig& train, Rng& rng, CondFn&& cond_fn) {
  std::vector<double> history;
  if (train.steps == 0) return history;
  if (train.batch == 0) throw ConfigError("training batch must be >= 1");
  std::vector<std::string> names;
  for (const auto& m : model.shape().modalities) names.push_back(m.name);
  const TrainingTable table = make_training_table(ds, names, diffusion.horizon);
  const NoiseSchedule sched = diffusion.schedule();
  Adam adam({train.learning_rate});
  history.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const auto rows = sample_rows(table.rows, train.batch, rng);
    const Tensor a0 = gather_rows(table.chunks, rows);
    Graph graph;
    std::vector<Var> mods;
    for (const auto& n : names) mods.push_back(graph.constant(gather_rows(table.modalities.at(n), rows)));
    std::optional<Var> robot;
    if (ds.robot_state_dim) robot = graph.constant(gather_rows(table.robot_state, rows));
    const Var cond = cond_fn(graph, mods, robot);
    BatchScoreFn score = [&](Graph& g, Var noised, std::span<const int> ks) {
      const Var t = g.constant(timestep_embedding(ks, sched.steps(), model.shape().config.time_pairs));
      return model.eps(g, noised, cond, t);
    };
    const Var loss = denoise_loss(graph, score, a0, sched, rng);
    history.push_back(graph.value(loss)[0]);
    graph.backward(loss, model.params());
    adam.step(model.params());
  }
  return history;
}

}  // namespace

FusionShape fusion_shape(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion) {
  FusionShape s;
  s.modalities = ds.modalities;
  s.robot_state_dim = ds.robot_state_dim;
  s.chunk_dim = ds.action_dim * diffusion.horizon;
  s.denoise_steps = diffusion.steps;
  s.beta_start = diffusion.beta_start;
  s.beta_end = diffusion.beta_end;
  s.variance = diffusion.variance;
  s.config = cfg;
  return s;
}

// ---------------------------------------------------------------- concat

ConcatPolicy::ConcatPolicy(FusionShape shape, Rng& rng, ActionNorm norm)
    : shape_(std::move(shape)), norm_(std::move(norm)) {
  build();
  for (const auto& e : encoders_) e.init(params_, rng);
  score_.init(params_, rng);
}

ConcatPolicy::ConcatPolicy(FusionShape shape, ParamSet params, ActionNorm norm)
    : shape_(std::move(shape)), norm_(std::move(norm)) {
  build();
  ParamSet reference;
  Rng scratch(0);
  for (const auto& e : encoders_) e.init(reference, scratch);
  score_.init(reference, scratch);
  check_layout(reference, params, "concat policy");
  params_ = std::move(params);
}

void ConcatPolicy::build() {
  if (shape_.modalities.empty()) throw ConfigError("concat policy needs at least one modality");
  const auto& c = shape_.config;
  for (const auto& m : shape_.modalities) {
    encoders_.emplace_back("enc." + m.name + ".", MlpSpec{m.dim, c.encoder_hidden, c.code_dim, c.activation});
  }
  const std::size_t cond = shape_.modalities.size() * shape_.embedding_dim();
  score_ = Mlp("score.", MlpSpec{shape_.chunk_dim + cond + shape_.time_dim(), c.score_hidden, shape_.chunk_dim,
                                 c.activation});
  schedule_ = make_schedule(shape_.denoise_steps, shape_.beta_start, shape_.beta_end);
}

Var ConcatPolicy::condition(Graph& graph, const std::vector<Var>& modalities, std::optional<Var> robot_state) const {
  if (modalities.size() != encoders_.size()) throw ContractError("concat policy: wrong number of modalities");
  std::vector<Var> parts;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    parts.push_back(encoders_[i].forward(graph, params_, modalities[i]));
    if (robot_state) parts.push_back(*robot_state);
  }
  return graph.concat_cols(parts);
}

Var ConcatPolicy::eps(Graph& graph, Var noised, Var condition, Var time_features) const {
  const Var parts[] = {noised, condition, time_features};
  return score_.forward(graph, params_, graph.concat_cols(parts));
}

std::vector<double> ConcatPolicy::sample(const Observation& obs, Rng& rng) const {
  Graph g(false);
  const ObsBatch b = single_obs(g, shape_, obs);
  const Tensor cond = g.value(condition(g, b.modalities, b.robot));
  return sample_with(cond, shape_.chunk_dim, schedule_, shape_.variance, shape_.config.time_pairs, rng,
                     [this](Graph& gg, Var a, Var c, Var t) { return eps(gg, a, c, t); });
}

std::vector<double> ConcatPolicy::act(const Observation& obs, Rng& rng) const {
  return norm_.denormalize(sample(obs, rng));
}

// ---------------------------------------------------------------- MoE

MoEFeaturePolicy::MoEFeaturePolicy(FusionShape shape, Rng& rng, ActionNorm norm)
    : shape_(std::move(shape)), norm_(std::move(norm)) {
  build();
  for (const auto& e : encoders_) e.init(params_, rng);
  for (const auto& p : projections_) p.init(params_, rng);
  gate_.init(params_, rng);
  score_.init(params_, rng);
}

MoEFeaturePolicy::MoEFeaturePolicy(FusionShape shape, ParamSet params, ActionNorm norm)
    : shape_(std::move(shape)), norm_(std::move(norm)) {
  build();
  ParamSet reference;
  Rng scratch(0);
  for (const auto& e : encoders_) e.init(reference, scratch);
  for (const auto& p : projections_) p.init(reference, scratch);
  gate_.init(reference, scratch);
  score_.init(reference, scratch);
  check_layout(reference, params, "MoE policy");
  params_ = std::move(params);
}

void MoEFeaturePolicy::build() {
  if (shape_.modalities.empty()) throw ConfigError("MoE policy needs at least one modality");
  const auto& c = shape_.config;
  const std::size_t shared = shape_.embedding_dim();
  for (const auto& m : shape_.modalities) {
    encoders_.emplace_back("enc." + m.name + ".", MlpSpec{m.dim, c.encoder_hidden, c.code_dim, c.activation});
    projections_.emplace_back("proj." + m.name + ".", MlpSpec{shared, {}, shared, c.activation});
  }
  gate_ = Mlp("gate.", MlpSpec{shape_.modalities.size() * shared, shape_.gate_hidden, shape_.modalities.size(),
                               c.activation});
  score_ = Mlp("score.", MlpSpec{shape_.chunk_dim + shared + shape_.time_dim(), c.score_hidden, shape_.chunk_dim,
                                 c.activation});
  schedule_ = make_schedule(shape_.denoise_steps, shape_.beta_start, shape_.beta_end);
}

MoEFeaturePolicy::Conditioning MoEFeaturePolicy::condition(Graph& graph, const std::vector<Var>& modalities,
                                                           std::optional<Var> robot_state) const {
  if (modalities.size() != encoders_.size()) throw ContractError("MoE policy: wrong number of modalities");
  std::vector<Var> embeddings;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    const Var code = encoders_[i].forward(graph, params_, modalities[i]);
    if (robot_state) {
      const Var parts[] = {code, *robot_state};
      embeddings.push_back(graph.concat_cols(parts));
    } else {
      embeddings.push_back(code);
    }
  }
  const Var gate = graph.softmax_rows(gate_.forward(graph, params_, graph.concat_cols(embeddings)));
  Var mixed{};
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const Var projected = projections_[i].forward(graph, params_, embeddings[i]);
    const Var term = graph.mul_col(projected, graph.slice_cols(gate, i, 1));
    mixed = i == 0 ? term : graph.add(mixed, term);
  }
  return {gate, mixed};
}

Var MoEFeaturePolicy::eps(Graph& graph, Var noised, Var condition, Var time_features) const {
  const Var parts[] = {noised, condition, time_features};
  return score_.forward(graph, params_, graph.concat_cols(parts));
}

std::vector<double> MoEFeaturePolicy::gate_weights(const Observation& obs) const {
  Graph g(false);
  const ObsBatch b = single_obs(g, shape_, obs);
  return g.value(condition(g, b.modalities, b.robot).gate).values();
}

std::vector<double> MoEFeaturePolicy::sample(const Observation& obs, Rng& rng) const {
  Graph g(false);
  const ObsBatch b = single_obs(g, shape_, obs);
  const Tensor cond = g.value(condition(g, b.modalities, b.robot).condition);
  return sample_with(cond, shape_.chunk_dim, schedule_, shape_.variance, shape_.config.time_pairs, rng,
                     [this](Graph& gg, Var a, Var c, Var t) { return eps(gg, a, c, t); });
}

std::vector<double> MoEFeaturePolicy::act(const Observation& obs, Rng& rng) const {
  return norm_.denormalize(sample(obs, rng));
}

// ---------------------------------------------------------------- training

ConcatTraining train_concat_policy(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion,
                                   const TrainConfig& train, Rng& rng) {
  ConcatTraining out{ConcatPolicy(fusion_shape(ds, cfg, diffusion), rng, ds.norm), {}};
  ConcatPolicy& model = out.policy;
  out.loss_history = train_fusion(model, ds, diffusion, train, rng,
                                  [&](Graph& g, const std::vector<Var>& mods, std::optional<Var> robot) {
                                    return model.condition(g, mods, robot);
                                  });
  return out;
}

MoETraining train_moe_policy(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion,
                             const TrainConfig& train, Rng& rng) {
  MoETraining out{MoEFeaturePolicy(fusion_shape(ds, cfg, diffusion), rng, ds.norm), {}};
  MoEFeaturePolicy& model = out.policy;
  out.loss_history = train_fusion(model, ds, diffusion, train, rng,
                                  [&](Graph& g, const std::vector<Var>& mods, std::optional<Var> robot) {
                                    return model.condition(g, mods, robot).condition;
                                  });
  return out;
}

}  // namespace modalcompose
