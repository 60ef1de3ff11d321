#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modalcompose/dataset.hpp"
#include "modalcompose/diffusion.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/observation.hpp"
#include "modalcompose/router.hpp"

namespace modalcompose {

using ExpertRef = std::shared_ptr<const ModalityExpert>;

/// Anything that maps an observation to an action chunk. Implementations are
/// immutable after construction, so concurrent act() calls with independent
/// generators are safe.
class Policy {
 public:
  virtual ~Policy() = default;

  // Denormalized chunk of action_dim() * horizon() values.
  virtual std::vector<double> act(const Observation& obs, Rng& rng) const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual std::string name() const = 0;
};

// sum_i w_i * eps_i,comp(a^k, e_i, k). Zero-weight experts are not evaluated,
// so a one-hot weight vector reproduces the selected expert bit-exactly.
std::vector<double> inter_compose(std::span<const ExpertRef> experts, const ConsensusWeights& w,
                                  std::span<const double> noised, std::span<const Embedding> embeddings, int k);
// Encodes every expert's modality from `obs` first. Throws ContractError
// naming a modality missing from `obs`.
std::vector<double> inter_compose(std::span<const ExpertRef> experts, const ConsensusWeights& w,
                                  std::span<const double> noised, const Observation& obs, int k);

std::vector<Embedding> encode_all(std::span<const ExpertRef> experts, const Observation& obs);

/// Policy-level product of modality experts: per control step the embeddings
/// are computed once, weights come from the router (then the routing
/// strategy) or from a fixed vector, and DDPM sampling runs on the weighted
/// sum of intra-composed scores.
class ComposedPolicy final : public Policy {
 public:
  ComposedPolicy(std::vector<ExpertRef> experts, std::shared_ptr<const Router> router, RoutingStrategy strategy,
                 NoiseSchedule schedule, ActionNorm norm, PosteriorVariance variance = PosteriorVariance::beta);
  ComposedPolicy(std::vector<ExpertRef> experts, ConsensusWeights fixed, NoiseSchedule schedule, ActionNorm norm,
                 PosteriorVariance variance = PosteriorVariance::beta);

  std::vector<double> act(const Observation& obs, Rng& rng) const override;
  std::size_t action_dim() const override { return norm_.dim(); }
  std::size_t horizon() const override;
  std::size_t param_count() const override;
  std::string name() const override;

  // Normalized sample in [-1, 1]^chunk.
  std::vector<double> sample(const Observation& obs, Rng& rng) const;
  // Weights actually used for `obs` (after the routing strategy).
  ConsensusWeights weights(const Observation& obs) const;
  ConsensusWeights weights(std::span<const Embedding> embeddings) const;

  const std::vector<ExpertRef>& experts() const noexcept { return experts_; }
  const std::shared_ptr<const Router>& router() const noexcept { return router_; }
  const std::optional<ConsensusWeights>& fixed_weights() const noexcept { return fixed_; }
  RoutingStrategy strategy() const noexcept { return strategy_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const ActionNorm& norm() const noexcept { return norm_; }

 private:
  void check_experts() const;

  std::vector<ExpertRef> experts_;
  std::shared_ptr<const Router> router_;
  std::optional<ConsensusWeights> fixed_;
  RoutingStrategy strategy_ = RoutingStrategy::soft;
  NoiseSchedule schedule_;
  ActionNorm norm_;
  PosteriorVariance variance_;
};

// Router modality order must match the expert order.
ComposedPolicy compose_policy(std::vector<ExpertRef> experts, std::shared_ptr<const Router> router,
                              RoutingStrategy strategy, const NoiseSchedule& schedule, const ActionNorm& norm,
                              PosteriorVariance variance = PosteriorVariance::beta);

// Constant weights, no router. Weights must be nonnegative and not all zero;
// they are renormalized (with a warning on stderr) when they do not sum to one.
ComposedPolicy manual_compose(std::vector<ExpertRef> experts, std::span<const double> fixed_weights,
                              const NoiseSchedule& schedule, const ActionNorm& norm,
                              PosteriorVariance variance = PosteriorVariance::beta);

// Renormalization used by manual_compose; `renormalized` reports whether the
// input had to be rescaled.
ConsensusWeights normalize_fixed_weights(std::span<const double> weights, bool* renormalized = nullptr);

}  // namespace modalcompose
