#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/dataset.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/mlp.hpp"

namespace modalcompose {

enum class RoutingStrategy { soft, hard, top2 };

RoutingStrategy parse_strategy(std::string_view token);
std::string_view to_string(RoutingStrategy s) noexcept;

/// Nonnegative modality weights summing to one.
struct ConsensusWeights {
  std::vector<double> w;

  std::size_t size() const noexcept { return w.size(); }
  double operator[](std::size_t i) const { return w[i]; }
  // Throws ContractError unless every entry is >= 0 and the sum is 1 +- tol.
  void validate(double tol = 1e-12) const;

  friend bool operator==(const ConsensusWeights&, const ConsensusWeights&) = default;
};

// soft: unchanged. hard: one-hot at the argmax (lowest index on ties).
// top2: keep the two largest (lower index on ties), renormalize. N <= 2 makes
// top2 identical to soft.
ConsensusWeights apply_strategy(const ConsensusWeights& w, RoutingStrategy strategy);

ConsensusWeights softmax(std::span<const double> logits);

struct RouterConfig {
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::tanh;
};

/// Maps the concatenated modality embeddings, in a fixed modality order, to
/// one logit per modality. Parameter names: `router.l<i>.{W,b}`.
class Router {
 public:
  Router(std::vector<std::string> modalities, std::vector<std::size_t> embedding_dims, const RouterConfig& cfg,
         Rng& rng);
  Router(std::vector<std::string> modalities, std::vector<std::size_t> embedding_dims, const RouterConfig& cfg,
         ParamSet params);

  const std::vector<std::string>& modalities() const noexcept { return modalities_; }
  const std::vector<std::size_t>& embedding_dims() const noexcept { return dims_; }
  const RouterConfig& config() const noexcept { return cfg_; }
  const MlpSpec& spec() const noexcept { return mlp_.spec(); }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.scalar_count(); }

  // Embeddings in the recorded modality order.
  ConsensusWeights weights(std::span<const Embedding> embeddings) const;
  std::vector<double> logits(std::span<const Embedding> embeddings) const;
  // [batch x sum of embedding dims] -> [batch x N] logits
  Var logits(Graph& graph, Var concatenated) const;

 private:
  void build();

  std::vector<std::string> modalities_;
  std::vector<std::size_t> dims_;
  RouterConfig cfg_;
  Mlp mlp_;
  ParamSet params_;
};

struct RouterTraining {
  Router router;
  std::vector<double> loss_history;
};

// Frozen noise predictor of one expert: (embeddings [batch x e], noised
// [batch x chunk], steps) -> [batch x chunk].
using FrozenScore = std::function<Tensor(const Tensor& embeddings, const Tensor& noised, std::span<const int> steps)>;

// Core of router fitting over precomputed per-expert embeddings (rows aligned
// with `chunks`, the normalized action targets).
RouterTraining train_router(std::span<const FrozenScore> scores, std::span<const Tensor> embeddings,
                            const Tensor& chunks, std::vector<std::string> modalities, const RouterConfig& cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng);

// Fits the router on frozen experts by minimizing
// E || eps - sum_i w_i(s) eps_i,comp(a^k, e_i, k) ||^2. Experts are read-only.
RouterTraining train_router(std::span<const ModalityExpert> experts, const Dataset& ds, const RouterConfig& cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng);

struct JointTraining {
  std::vector<ModalityExpert> experts;
  Router router;
  std::vector<double> loss_history;
};

// End-to-end alternative to the two-stage procedure: the same composed
// denoising loss, with gradients flowing into the router and every expert.
JointTraining train_joint(std::vector<ModalityExpert> experts, Router router, const Dataset& ds,
                          const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng);

// Per-row intra-modality scores of a frozen expert for a batch of noised
// chunks, as a constant tensor [batch x chunk].
Tensor batch_intra_compose(const ModalityExpert& expert, const Tensor& embeddings, const Tensor& noised,
                           std::span<const int> steps);
// Frozen embeddings [batch x embedding dim] of one expert.
Tensor batch_encode(const ModalityExpert& expert, const Tensor& modality, const Tensor& robot_state);

}  // namespace modalcompose
