#include "modalcompose/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "modalcompose/errors.hpp"
#include "modalcompose/optim.hpp"

namespace modalcompose {

RoutingStrategy parse_strategy(std::string_view token) {
  if (token == "soft") return RoutingStrategy::soft;
  if (token == "hard") return RoutingStrategy::hard;
  if (token == "top2") return RoutingStrategy::top2;
  throw ConfigError("unknown routing strategy '" + std::string(token) + "' (expected soft, hard or top2)");
}

std::string_view to_string(RoutingStrategy s) noexcept {
  switch (s) {
    case RoutingStrategy::soft:
      return "soft";
    case RoutingStrategy::hard:
      return "hard";
    case RoutingStrategy::top2:
      return "top2";
  }
  return "soft";
}

void ConsensusWeights::validate(double tol) const {
  if (w.empty()) throw ContractError("consensus weights are empty");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("consensus weights must be finite and nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw ContractError("consensus weights must sum to 1");
}

ConsensusWeights apply_strategy(const ConsensusWeights& w, RoutingStrategy strategy) {
  const std::size_t n = w.size();
  if (strategy == RoutingStrategy::soft || (strategy == RoutingStrategy::top2 && n <= 2)) return w;
  if (n == 0) return w;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Descending weight, ascending index on ties.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w.w[a] > w.w[b]; });
  ConsensusWeights out{std::vector<double>(n, 0.0)};
  if (strategy == RoutingStrategy::hard) {
    out.w[order[0]] = 1.0;
    return out;
  }
  // Already supported on two entries: keep it bit-identical so the strategy is
  // idempotent.
  if (std::all_of(order.begin() + 2, order.end(), [&](std::size_t i) { return w.w[i] == 0.0; })) return w;
  const double a = w.w[order[0]], b = w.w[order[1]];
  const double total = a + b;
  if (total <= 0.0) {
    out.w[order[0]] = 1.0;
    return out;
  }
  out.w[order[0]] = a / total;
  out.w[order[1]] = b / total;
  return out;
}

ConsensusWeights softmax(std::span<const double> logits) {
  if (logits.empty()) throw ContractError("softmax of an empty vector");
  const double hi = *std::max_element(logits.begin(), logits.end());
  ConsensusWeights out{std::vector<double>(logits.size())};
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.w[i] = std::exp(logits[i] - hi);
    z += out.w[i];
  }
  for (auto& v : out.w) v /= z;
  return out;
}

Router::Router(std::vector<std::string> modalities, std::vector<std::size_t> embedding_dims, const RouterConfig& cfg,
               Rng& rng)
    : modalities_(std::move(modalities)), dims_(std::move(embedding_dims)), cfg_(cfg) {
  build();
  mlp_.init(params_, rng);
}

Router::Router(std::vector<std::string> modalities, std::vector<std::size_t> embedding_dims, const RouterConfig& cfg,
               ParamSet params)
    : modalities_(std::move(modalities)), dims_(std::move(embedding_dims)), cfg_(cfg) {
  build();
  ParamSet reference;
  Rng scratch(0);
  mlp_.init(reference, scratch);
  if (reference.names() != params.names()) throw ShapeError("parameter names do not match the router layout");
  for (const auto& name : reference.names()) {
    if (!reference.value(name).same_shape(params.value(name))) {
      throw ShapeError("router parameter '" + name + "' has the wrong shape");
    }
  }
  params_ = std::move(params);
}

void Router::build() {
  if (modalities_.empty() || modalities_.size() != dims_.size()) {
    throw ConfigError("router needs one embedding dim per modality");
  }
  const std::size_t input = std::accumulate(dims_.begin(), dims_.end(), std::size_t{0});
  mlp_ = Mlp("router.", MlpSpec{input, cfg_.hidden, modalities_.size(), cfg_.activation});
}

std::vector<double> Router::logits(std::span<const Embedding> embeddings) const {
  if (embeddings.size() != modalities_.size()) {
    throw ContractError("router expects " + std::to_string(modalities_.size()) + " embeddings, got " +
                        std::to_string(embeddings.size()));
  }
  std::vector<double> input;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].values.size() != dims_[i]) {
      throw ContractError("embedding " + std::to_string(i) + " does not match router modality '" + modalities_[i] +
                          "'");
    }
    input.insert(input.end(), embeddings[i].values.begin(), embeddings[i].values.end());
  }
  return mlp_.forward(params_, Tensor::row(input)).values();
}

ConsensusWeights Router::weights(std::span<const Embedding> embeddings) const { return softmax(logits(embeddings)); }

Var Router::logits(Graph& graph, Var concatenated) const { return mlp_.forward(graph, params_, concatenated); }

Tensor batch_encode(const ModalityExpert& expert, const Tensor& modality, const Tensor& robot_state) {
  Graph graph(false);
  std::optional<Var> robot;
  if (expert.shape().robot_state_dim) robot = graph.constant(robot_state);
  return graph.value(expert.encode(graph, graph.constant(modality), robot));
}

Tensor batch_intra_compose(const ModalityExpert& expert, const Tensor& embeddings, const Tensor& noised,
                           std::span<const int> steps) {
  return expert.intra_compose(noised, embeddings, steps);
}

RouterTraining train_router(std::span<const FrozenScore> scores, std::span<const Tensor> embeddings,
                            const Tensor& chunks, std::vector<std::string> modalities, const RouterConfig& cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng) {
  if (scores.empty()) throw ContractError("router training needs at least one expert");
  if (scores.size() != embeddings.size() || scores.size() != modalities.size()) {
    throw ContractError("router training: score, embedding and modality counts differ");
  }
  std::vector<std::size_t> dims;
  for (const auto& e : embeddings) {
    if (e.rows() != chunks.rows()) throw ShapeError("router training: embedding rows differ from action rows");
    dims.push_back(e.cols());
  }
  RouterTraining out{Router(std::move(modalities), dims, cfg, rng), {}};
  if (train.steps == 0) return out;
  if (train.batch == 0) throw ConfigError("training batch must be >= 1");

  const NoiseSchedule sched = diffusion.schedule();
  Adam adam({train.learning_rate});
  out.loss_history.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const auto rows = sample_rows(chunks.rows(), train.batch, rng);
    const Tensor a0 = gather_rows(chunks, rows);
    std::vector<Tensor> batch_emb;
    for (const auto& e : embeddings) batch_emb.push_back(gather_rows(e, rows));

    Graph graph;
    BatchScoreFn composed = [&](Graph& g, Var noised, std::span<const int> ks) {
      std::vector<Var> parts;
      for (const auto& e : batch_emb) parts.push_back(g.constant(e));
      const Var w = g.softmax_rows(out.router.logits(g, g.concat_cols(parts)));
      Var sum{};
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const Var eps_i = g.constant(scores[i](batch_emb[i], g.value(noised), ks));
        const Var term = g.mul_col(eps_i, g.slice_cols(w, i, 1));
        sum = i == 0 ? term : g.add(sum, term);
      }
      return sum;
    };
    const Var loss = denoise_loss(graph, composed, a0, sched, rng);
    out.loss_history.push_back(graph.value(loss)[0]);
    graph.backward(loss, out.router.params());
    adam.step(out.router.params());
  }
  return out;
}

RouterTraining train_router(std::span<const ModalityExpert> experts, const Dataset& ds, const RouterConfig& cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng) {
  if (experts.empty()) throw ContractError("router training needs at least one expert");
  std::vector<std::string> names;
  for (const auto& ex : experts) {
    if (!ds.has_modality(ex.modality())) throw ContractError("no data for expert '" + ex.modality() + "'");
    if (ex.chunk_dim() != ds.action_dim * diffusion.horizon || ex.shape().denoise_steps != diffusion.steps) {
      throw ContractError("expert '" + ex.modality() + "' does not match the diffusion configuration");
    }
    names.push_back(ex.modality());
  }
  const TrainingTable table = make_training_table(ds, names, diffusion.horizon);
  // Embeddings do not depend on the noise draw; compute them once.
  std::vector<Tensor> embeddings;
  std::vector<FrozenScore> scores;
  for (const auto& ex : experts) {
    embeddings.push_back(batch_encode(ex, table.modalities.at(ex.modality()), table.robot_state));
    scores.push_back([&ex](const Tensor& e, const Tensor& noised, std::span<const int> ks) {
      return batch_intra_compose(ex, e, noised, ks);
    });
  }
  return train_router(scores, embeddings, table.chunks, names, cfg, diffusion, train, rng);
}

JointTraining train_joint(std::vector<ModalityExpert> experts, Router router, const Dataset& ds,
                          const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng) {
  if (experts.empty()) throw ContractError("joint training needs at least one expert");
  std::vector<std::string> names;
  for (const auto& ex : experts) names.push_back(ex.modality());
  if (router.modalities() != names) throw ContractError("router modality order does not match the experts");
  JointTraining out{std::move(experts), std::move(router), {}};
  if (train.steps == 0) return out;

  const NoiseSchedule sched = diffusion.schedule();
  const TrainingTable table = make_training_table(ds, names, diffusion.horizon);
  std::vector<ParamSet*> targets;
  for (auto& ex : out.experts) targets.push_back(&ex.params());
  targets.push_back(&out.router.params());
  // Parameter names repeat across experts, so each set keeps its own moments.
  std::vector<Adam> adams(targets.size(), Adam({train.learning_rate}));
  out.loss_history.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const auto rows = sample_rows(table.rows, train.batch, rng);
    const Tensor a0 = gather_rows(table.chunks, rows);
    Graph graph;
    const Var robot = graph.constant(gather_rows(table.robot_state, rows));
    std::vector<Var> emb;
    for (const auto& ex : out.experts) {
      const Var m = graph.constant(gather_rows(table.modalities.at(ex.modality()), rows));
      emb.push_back(ex.encode(graph, m, ds.robot_state_dim ? std::optional<Var>(robot) : std::nullopt));
    }
    const Var w = graph.softmax_rows(out.router.logits(graph, graph.concat_cols(emb)));
    BatchScoreFn composed = [&](Graph& g, Var noised, std::span<const int> ks) {
      const Var t = g.constant(timestep_embedding(ks, sched.steps(), out.experts[0].shape().config.time_pairs));
      Var sum{};
      for (std::size_t i = 0; i < out.experts.size(); ++i) {
        const auto& ex = out.experts[i];
        // Row r averages the sub-policies active at its step k_r.
        Var intra{};
        for (std::size_t j = 0; j < ex.sub_policy_count(); ++j) {
          Tensor mask({ks.size(), 1});
          for (std::size_t r = 0; r < ks.size(); ++r) {
            std::size_t active = 0;
            for (std::size_t q = 0; q < ex.sub_policy_count(); ++q) active += ex.active(q, ks[r]) ? 1 : 0;
            mask[r] = ex.active(j, ks[r]) ? 1.0 / static_cast<double>(active) : 0.0;
          }
          const Var term = g.mul_col(ex.subpolicy_eps(g, j, noised, emb[i], t), g.constant(std::move(mask)));
          intra = j == 0 ? term : g.add(intra, term);
        }
        const Var weighted = g.mul_col(intra, g.slice_cols(w, i, 1));
        sum = i == 0 ? weighted : g.add(sum, weighted);
      }
      return sum;
    };
    const Var loss = denoise_loss(graph, composed, a0, sched, rng);
    out.loss_history.push_back(graph.value(loss)[0]);
    graph.backward(loss, targets);
    for (std::size_t i = 0; i < targets.size(); ++i) adams[i].step(*targets[i]);
  }
  return out;
}

}  // namespace modalcompose
