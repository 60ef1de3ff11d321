#include "modalcompose/experts.hpp"

#include "modalcompose/errors.hpp"
#include "modalcompose/optim.hpp"

namespace modalcompose {

namespace {

Tensor row_of(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  Tensor t({1, a.size() + b.size() + c.size()});
  auto out = t.data().begin();
  out = std::copy(a.begin(), a.end(), out);
  out = std::copy(b.begin(), b.end(), out);
  std::copy(c.begin(), c.end(), out);
  return t;
}

}  // namespace

MlpSpec ExpertShape::encoder_spec() const {
  return {modality_dim, config.encoder_hidden, config.code_dim, config.activation};
}

MlpSpec ExpertShape::score_spec() const {
  return {chunk_dim + embedding_dim() + time_dim(), config.score_hidden, chunk_dim, config.activation};
}

ModalityExpert::ModalityExpert(ExpertShape shape, Rng& rng) : shape_(std::move(shape)) {
  build();
  encoder_.init(params_, rng);
  for (const auto& s : sub_) s.init(params_, rng);
}

ModalityExpert::ModalityExpert(ExpertShape shape, ParamSet params) : shape_(std::move(shape)) {
  build();
  ParamSet reference;
  Rng scratch(0);
  encoder_.init(reference, scratch);
  for (const auto& s : sub_) s.init(reference, scratch);
  if (reference.names() != params.names()) {
    throw ShapeError("parameter names do not match expert '" + shape_.modality + "'");
  }
  for (const auto& name : reference.names()) {
    if (!reference.value(name).same_shape(params.value(name))) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(params.value(name).dims()) +
                       ", expected " + shape_string(reference.value(name).dims()));
    }
  }
  params_ = std::move(params);
}

void ModalityExpert::build() {
  if (shape_.modality.empty()) throw ConfigError("expert needs a modality name");
  if (shape_.config.sub_policies < 1) throw ConfigError("expert needs at least one sub-policy");
  if (shape_.config.noise_band_split && shape_.config.sub_policies != 2) {
    throw ConfigError("noise_band_split requires exactly two sub-policies");
  }
  if (shape_.denoise_steps < 1) throw ConfigError("expert needs denoise_steps >= 1");
  if (shape_.config.noise_band_split && shape_.denoise_steps < 2) {
    throw ConfigError("noise_band_split requires at least two denoising steps");
  }
  encoder_ = Mlp("encoder.", shape_.encoder_spec());
  sub_.clear();
  for (std::size_t j = 0; j < shape_.config.sub_policies; ++j) {
    sub_.emplace_back("sub" + std::to_string(j) + ".", shape_.score_spec());
  }
  time_cache_.clear();
  for (int k = 1; k <= shape_.denoise_steps; ++k) {
    time_cache_.push_back(timestep_embedding(k, shape_.denoise_steps, shape_.config.time_pairs));
  }
}

Embedding ModalityExpert::encode(std::span<const double> modality, std::span<const double> robot_state) const {
  if (modality.size() != shape_.modality_dim) {
    throw ShapeError("modality '" + shape_.modality + "' expects dim " + std::to_string(shape_.modality_dim) +
                     ", got " + std::to_string(modality.size()));
  }
  if (robot_state.size() != shape_.robot_state_dim) {
    throw ShapeError("expert '" + shape_.modality + "' expects robot-state dim " +
                     std::to_string(shape_.robot_state_dim) + ", got " + std::to_string(robot_state.size()));
  }
  const Tensor code = encoder_.forward(params_, Tensor::row(modality));
  Embedding e;
  e.values.assign(code.data().begin(), code.data().end());
  e.values.insert(e.values.end(), robot_state.begin(), robot_state.end());
  return e;
}

std::pair<int, int> ModalityExpert::band(std::size_t j) const {
  if (j >= sub_.size()) throw ContractError("sub-policy index out of range");
  if (!shape_.config.noise_band_split) return {1, shape_.denoise_steps};
  const int half = shape_.denoise_steps / 2;
  return j == 0 ? std::pair{half + 1, shape_.denoise_steps} : std::pair{1, half};
}

bool ModalityExpert::active(std::size_t j, int k) const {
  const auto [lo, hi] = band(j);
  return k >= lo && k <= hi;
}

std::vector<double> ModalityExpert::subpolicy_eps(std::size_t j, std::span<const double> noised, const Embedding& e,
                                                  int k) const {
  if (j >= sub_.size()) throw ContractError("sub-policy index out of range");
  if (k < 1 || k > shape_.denoise_steps) {
    throw ContractError("denoising step " + std::to_string(k) + " outside 1.." + std::to_string(shape_.denoise_steps));
  }
  if (noised.size() != shape_.chunk_dim) throw ShapeError("noised action has the wrong dimension");
  if (e.values.size() != embedding_dim()) throw ShapeError("embedding has the wrong dimension");
  const Tensor out = sub_[j].forward(params_, row_of(noised, e.values, time_cache_[k - 1]));
  return out.values();
}

std::vector<double> ModalityExpert::intra_compose(std::span<const double> noised, const Embedding& e, int k) const {
  if (e.values.size() != embedding_dim()) throw ShapeError("embedding has the wrong dimension");
  const int steps[] = {k};
  return intra_compose(Tensor::row(noised), Tensor::row(e.values), steps).values();
}

Tensor ModalityExpert::intra_compose(const Tensor& noised, const Tensor& embeddings, std::span<const int> steps) const {
  const std::size_t rows = noised.rows();
  if (noised.cols() != shape_.chunk_dim) throw ShapeError("noised action has the wrong dimension");
  if (embeddings.rows() != rows || embeddings.cols() != embedding_dim()) {
    throw ShapeError("embeddings do not match the noised batch");
  }
  if (steps.size() != rows) throw ShapeError("need one denoising step per row");
  Tensor time({rows, shape_.time_dim()});
  for (std::size_t r = 0; r < rows; ++r) {
    if (steps[r] < 1 || steps[r] > shape_.denoise_steps) {
      throw ContractError("denoising step " + std::to_string(steps[r]) + " outside 1.." +
                          std::to_string(shape_.denoise_steps));
    }
    const auto& t = time_cache_[steps[r] - 1];
    std::copy(t.begin(), t.end(), time.row_span(r).begin());
  }
  Graph graph(false);
  const Var a = graph.constant(noised);
  const Var e = graph.constant(embeddings);
  const Var t = graph.constant(std::move(time));
  std::vector<Tensor> outs;
  for (std::size_t j = 0; j < sub_.size(); ++j) {
    bool any = false;
    for (int k : steps) any = any || active(j, k);
    outs.push_back(any ? graph.value(subpolicy_eps(graph, j, a, e, t)) : Tensor());
  }
  Tensor out({rows, shape_.chunk_dim}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row_span(r);
    std::size_t used = 0;
    for (std::size_t j = 0; j < sub_.size(); ++j) {
      if (!active(j, steps[r])) continue;
      const auto src = outs[j].row_span(r);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = used == 0 ? src[i] : dst[i] + src[i];
      ++used;
    }
    if (used > 1) {
      const double inv = 1.0 / static_cast<double>(used);
      for (auto& v : dst) v *= inv;
    }
  }
  return out;
}

Var ModalityExpert::encode(Graph& graph, Var modality, std::optional<Var> robot_state) const {
  const Var code = encoder_.forward(graph, params_, modality);
  if (!robot_state) {
    if (shape_.robot_state_dim != 0) throw ShapeError("expert '" + shape_.modality + "' needs the robot state");
    return code;
  }
  if (graph.value(*robot_state).cols() != shape_.robot_state_dim) throw ShapeError("robot state has the wrong width");
  const Var parts[] = {code, *robot_state};
  return graph.concat_cols(parts);
}

Var ModalityExpert::subpolicy_eps(Graph& graph, std::size_t j, Var noised, Var embedding, Var time_features) const {
  if (j >= sub_.size()) throw ContractError("sub-policy index out of range");
  const Var parts[] = {noised, embedding, time_features};
  return sub_[j].forward(graph, params_, graph.concat_cols(parts));
}

ExpertTraining train_expert(const Dataset& ds, const std::string& modality, const ExpertConfig& expert_cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng) {
  if (!ds.has_modality(modality)) throw ConfigError("dataset has no modality '" + modality + "'");
  if (train.batch == 0) throw ConfigError("training batch must be >= 1");
  const NoiseSchedule sched = diffusion.schedule();
  ExpertShape shape{modality, ds.modality(modality).dim, ds.robot_state_dim, ds.action_dim * diffusion.horizon,
                    diffusion.steps, expert_cfg};
  ExpertTraining out{ModalityExpert(shape, rng), {}};
  ModalityExpert& expert = out.expert;
  if (train.steps == 0) return out;

  const std::string names[] = {modality};
  const TrainingTable table = make_training_table(ds, names, diffusion.horizon);
  Adam adam({train.learning_rate});
  out.loss_history.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const auto rows = sample_rows(table.rows, train.batch, rng);
    const Tensor a0 = gather_rows(table.chunks, rows);
    Graph graph;
    const Var m = graph.constant(gather_rows(table.modalities.at(modality), rows));
    std::optional<Var> robot;
    if (ds.robot_state_dim) robot = graph.constant(gather_rows(table.robot_state, rows));
    const Var e = expert.encode(graph, m, robot);

    std::vector<Var> losses;
    for (std::size_t j = 0; j < expert.sub_policy_count(); ++j) {
      const auto [lo, hi] = expert.band(j);
      BatchScoreFn score = [&](Graph& g, Var noised, std::span<const int> ks) {
        const Var t = g.constant(timestep_embedding(ks, sched.steps(), expert_cfg.time_pairs));
        return expert.subpolicy_eps(g, j, noised, e, t);
      };
      losses.push_back(denoise_loss(graph, score, a0, sched, rng, lo, hi));
    }
    Var loss = losses[0];
    for (std::size_t j = 1; j < losses.size(); ++j) loss = graph.add(loss, losses[j]);
    loss = graph.scale(loss, 1.0 / static_cast<double>(losses.size()));
    out.loss_history.push_back(graph.value(loss)[0]);
    graph.backward(loss, expert.params());
    adam.step(expert.params());
  }
  return out;
}

}  // namespace modalcompose
