#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "modalcompose/compose.hpp"
#include "modalcompose/dataset.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/mlp.hpp"

namespace modalcompose {

// Dimensions shared by the single-network baselines. Encoders and the score
// network reuse the expert config so parameter counts stay comparable.
struct FusionShape {
  std::vector<ModalityInfo> modalities;
  std::size_t robot_state_dim = 0;
  std::size_t chunk_dim = 0;
  int denoise_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  PosteriorVariance variance = PosteriorVariance::beta;
  ExpertConfig config;
  std::vector<std::size_t> gate_hidden{64};  // MoE only

  std::size_t embedding_dim() const noexcept { return config.code_dim + robot_state_dim; }
  std::size_t time_dim() const noexcept { return 2 * config.time_pairs; }

  friend bool operator==(const FusionShape&, const FusionShape&) = default;
};

/// Feature concatenation: one encoder per modality, a single score network
/// conditioned on the concatenation of all embeddings.
/// Parameter names: `enc.<modality>.l<i>.*`, `score.l<i>.*`.
class ConcatPolicy final : public Policy {
 public:
  ConcatPolicy(FusionShape shape, Rng& rng, ActionNorm norm);
  ConcatPolicy(FusionShape shape, ParamSet params, ActionNorm norm);

  std::vector<double> act(const Observation& obs, Rng& rng) const override;
  std::size_t action_dim() const override { return norm_.dim(); }
  std::size_t horizon() const override { return shape_.chunk_dim / norm_.dim(); }
  std::size_t param_count() const override { return params_.scalar_count(); }
  std::string name() const override { return "concat"; }

  std::vector<double> sample(const Observation& obs, Rng& rng) const;
  // [batch x sum of embedding dims]
  Var condition(Graph& graph, const std::vector<Var>& modalities, std::optional<Var> robot_state) const;
  Var eps(Graph& graph, Var noised, Var condition, Var time_features) const;

  const FusionShape& shape() const noexcept { return shape_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const ActionNorm& norm() const noexcept { return norm_; }
  const MlpSpec& score_spec() const noexcept { return score_.spec(); }

 private:
  void build();

  FusionShape shape_;
  ParamSet params_;
  ActionNorm norm_;
  std::vector<Mlp> encoders_;
  Mlp score_;
  NoiseSchedule schedule_;
};

/// Feature-level mixture of experts: per-modality encoders, a linear
/// projection of each embedding to a shared width, a softmax gate over
/// modalities, and one score network conditioned on the gated sum.
/// Parameter names: `enc.<m>.*`, `proj.<m>.*`, `gate.*`, `score.*`.
class MoEFeaturePolicy final : public Policy {
 public:
  MoEFeaturePolicy(FusionShape shape, Rng& rng, ActionNorm norm);
  MoEFeaturePolicy(FusionShape shape, ParamSet params, ActionNorm norm);

  std::vector<double> act(const Observation& obs, Rng& rng) const override;
  std::size_t action_dim() const override { return norm_.dim(); }
  std::size_t horizon() const override { return shape_.chunk_dim / norm_.dim(); }
  std::size_t param_count() const override { return params_.scalar_count(); }
  std::string name() const override { return "moe"; }

  std::vector<double> sample(const Observation& obs, Rng& rng) const;
  struct Conditioning {
    Var gate;       // [batch x N] softmax weights
    Var condition;  // [batch x shared dim]
  };
  Conditioning condition(Graph& graph, const std::vector<Var>& modalities, std::optional<Var> robot_state) const;
  Var eps(Graph& graph, Var noised, Var condition, Var time_features) const;
  std::vector<double> gate_weights(const Observation& obs) const;

  const FusionShape& shape() const noexcept { return shape_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const ActionNorm& norm() const noexcept { return norm_; }

 private:
  void build();

  FusionShape shape_;
  ParamSet params_;
  ActionNorm norm_;
  std::vector<Mlp> encoders_;
  std::vector<Mlp> projections_;
  Mlp gate_;
  Mlp score_;
  NoiseSchedule schedule_;
};

struct ConcatTraining {
  ConcatPolicy policy;
  std::vector<double> loss_history;
};

struct MoETraining {
  MoEFeaturePolicy policy;
  std::vector<double> loss_history;
};

FusionShape fusion_shape(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion);

ConcatTraining train_concat_policy(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion,
                                   const TrainConfig& train, Rng& rng);
MoETraining train_moe_policy(const Dataset& ds, const ExpertConfig& cfg, const DiffusionConfig& diffusion,
                             const TrainConfig& train, Rng& rng);

}  // namespace modalcompose
