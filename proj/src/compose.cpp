#include "modalcompose/compose.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "modalcompose/errors.hpp"

namespace modalcompose {

std::vector<Embedding> encode_all(std::span<const ExpertRef> experts, const Observation& obs) {
  std::vector<Embedding> out;
  out.reserve(experts.size());
  for (const auto& ex : experts) out.push_back(ex->encode(obs.modality(ex->modality()), obs.robot_state));
  return out;
}

std::vector<double> inter_compose(std::span<const ExpertRef> experts, const ConsensusWeights& w,
                                  std::span<const double> noised, std::span<const Embedding> embeddings, int k) {
  if (w.size() != experts.size() || embeddings.size() != experts.size()) {
    throw ContractError("inter_compose needs one weight and one embedding per expert");
  }
  std::vector<double> out;
  bool first = true;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (w[i] == 0.0) continue;
    const auto eps = experts[i]->intra_compose(noised, embeddings[i], k);
    if (first) {
      out.resize(eps.size());
      for (std::size_t c = 0; c < eps.size(); ++c) out[c] = w[i] * eps[c];
      first = false;
    } else {
      for (std::size_t c = 0; c < eps.size(); ++c) out[c] += w[i] * eps[c];
    }
  }
  if (first) throw ContractError("inter_compose: all weights are zero");
  return out;
}

std::vector<double> inter_compose(std::span<const ExpertRef> experts, const ConsensusWeights& w,
                                  std::span<const double> noised, const Observation& obs, int k) {
  const auto embeddings = encode_all(experts, obs);
  return inter_compose(experts, w, noised, embeddings, k);
}

ComposedPolicy::ComposedPolicy(std::vector<ExpertRef> experts, std::shared_ptr<const Router> router,
                               RoutingStrategy strategy, NoiseSchedule schedule, ActionNorm norm,
                               PosteriorVariance variance)
    : experts_(std::move(experts)),
      router_(std::move(router)),
      strategy_(strategy),
      schedule_(std::move(schedule)),
      norm_(std::move(norm)),
      variance_(variance) {
  if (!router_) throw ContractError("composed policy needs a router or fixed weights");
  check_experts();
  if (router_->modalities().size() != experts_.size()) {
    throw ContractError("router has " + std::to_string(router_->modalities().size()) + " modalities but there are " +
                        std::to_string(experts_.size()) + " experts");
  }
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    if (router_->modalities()[i] != experts_[i]->modality() ||
        router_->embedding_dims()[i] != experts_[i]->embedding_dim()) {
      throw ContractError("router modality order does not match the experts at position " + std::to_string(i));
    }
  }
}

ComposedPolicy::ComposedPolicy(std::vector<ExpertRef> experts, ConsensusWeights fixed, NoiseSchedule schedule,
                               ActionNorm norm, PosteriorVariance variance)
    : experts_(std::move(experts)),
      fixed_(std::move(fixed)),
      schedule_(std::move(schedule)),
      norm_(std::move(norm)),
      variance_(variance) {
  check_experts();
  if (fixed_->size() != experts_.size()) throw ContractError("need one fixed weight per expert");
  fixed_->validate();
}

void ComposedPolicy::check_experts() const {
  if (experts_.empty()) throw ContractError("composed policy needs at least one expert");
  const auto& first = *experts_.front();
  for (const auto& ex : experts_) {
    if (!ex) throw ContractError("null expert");
    if (ex->chunk_dim() != first.chunk_dim()) throw ContractError("experts disagree on the action chunk size");
    if (ex->shape().denoise_steps != schedule_.steps()) {
      throw ContractError("expert '" + ex->modality() + "' was trained for " +
                          std::to_string(ex->shape().denoise_steps) + " denoising steps, schedule has " +
                          std::to_string(schedule_.steps()));
    }
  }
  if (norm_.dim() == 0 || first.chunk_dim() % norm_.dim() != 0) {
    throw ContractError("action normalization does not match the expert chunk size");
  }
}

std::size_t ComposedPolicy::horizon() const { return experts_.front()->chunk_dim() / norm_.dim(); }

std::size_t ComposedPolicy::param_count() const {
  std::size_t n = router_ ? router_->param_count() : 0;
  for (const auto& ex : experts_) n += ex->param_count();
  return n;
}

std::string ComposedPolicy::name() const {
  std::ostringstream os;
  os << "composed[";
  for (std::size_t i = 0; i < experts_.size(); ++i) os << (i ? "," : "") << experts_[i]->modality();
  os << "]";
  if (router_) {
    os << ":router:" << to_string(strategy_);
  } else {
    os << ":fixed";
  }
  return os.str();
}

ConsensusWeights ComposedPolicy::weights(std::span<const Embedding> embeddings) const {
  if (fixed_) return *fixed_;
  return apply_strategy(router_->weights(embeddings), strategy_);
}

ConsensusWeights ComposedPolicy::weights(const Observation& obs) const { return weights(encode_all(experts_, obs)); }

std::vector<double> ComposedPolicy::sample(const Observation& obs, Rng& rng) const {
  const auto embeddings = encode_all(experts_, obs);
  const ConsensusWeights w = weights(embeddings);
  ScoreFn score = [&](std::span<const double> noised, int k) {
    return inter_compose(experts_, w, noised, embeddings, k);
  };
  SamplerOptions opts;
  opts.variance = variance_;
  return ddpm_sample(score, experts_.front()->chunk_dim(), schedule_, rng, opts);
}

std::vector<double> ComposedPolicy::act(const Observation& obs, Rng& rng) const {
  return norm_.denormalize(sample(obs, rng));
}

ComposedPolicy compose_policy(std::vector<ExpertRef> experts, std::shared_ptr<const Router> router,
                              RoutingStrategy strategy, const NoiseSchedule& schedule, const ActionNorm& norm,
                              PosteriorVariance variance) {
  return ComposedPolicy(std::move(experts), std::move(router), strategy, schedule, norm, variance);
}

ConsensusWeights normalize_fixed_weights(std::span<const double> weights, bool* renormalized) {
  if (weights.empty()) throw ContractError("fixed weights are empty");
  double total = 0.0;
  for (double v : weights) {
    if (!std::isfinite(v) || v < 0.0) throw ContractError("fixed weights must be finite and nonnegative");
    total += v;
  }
  if (total == 0.0) throw ContractError("fixed weights are all zero");
  ConsensusWeights out{std::vector<double>(weights.begin(), weights.end())};
  const bool rescale = std::abs(total - 1.0) > 1e-12;
  if (rescale) {
    for (auto& v : out.w) v /= total;
  }
  if (renormalized) *renormalized = rescale;
  return out;
}

ComposedPolicy manual_compose(std::vector<ExpertRef> experts, std::span<const double> fixed_weights,
                              const NoiseSchedule& schedule, const ActionNorm& norm, PosteriorVariance variance) {
  bool rescaled = false;
  ConsensusWeights w = normalize_fixed_weights(fixed_weights, &rescaled);
  if (rescaled) std::cerr << "warning: fixed consensus weights do not sum to 1; renormalized\n";
  return ComposedPolicy(std::move(experts), std::move(w), schedule, norm, variance);
}

}  // namespace modalcompose
