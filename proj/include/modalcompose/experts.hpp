#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modalcompose/autograd.hpp"
#include "modalcompose/dataset.hpp"
#include "modalcompose/diffusion.hpp"
#include "modalcompose/mlp.hpp"
#include "modalcompose/rng.hpp"

namespace modalcompose {

struct DiffusionConfig {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t horizon = 1;
  PosteriorVariance variance = PosteriorVariance::beta;

  NoiseSchedule schedule() const { return make_schedule(steps, beta_start, beta_end); }
};

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
};

struct ExpertConfig {
  std::size_t sub_policies = 2;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::size_t code_dim = 32;
  std::vector<std::size_t> score_hidden{128, 128};
  Activation activation = Activation::tanh;
  // Sub-policy 0 serves k in (K/2, K], sub-policy 1 serves k in [1, K/2].
  bool noise_band_split = false;
  std::size_t time_pairs = 8;

  friend bool operator==(const ExpertConfig&, const ExpertConfig&) = default;
};

// Everything needed to rebuild an expert around a parameter set.
struct ExpertShape {
  std::string modality;
  std::size_t modality_dim = 0;
  std::size_t robot_state_dim = 0;
  std::size_t chunk_dim = 0;
  int denoise_steps = 50;
  ExpertConfig config;

  std::size_t embedding_dim() const noexcept { return config.code_dim + robot_state_dim; }
  std::size_t time_dim() const noexcept { return 2 * config.time_pairs; }
  MlpSpec encoder_spec() const;
  MlpSpec score_spec() const;

  friend bool operator==(const ExpertShape&, const ExpertShape&) = default;
};

// Encoder output for one modality followed by the robot state.
struct Embedding {
  std::vector<double> values;
};

/// One sensory stream's policy: an encoder and K_i diffusion sub-policies
/// whose noise predictions are averaged.
///
/// Parameter names: `encoder.l<i>.{W,b}` and `sub<j>.l<i>.{W,b}`.
class ModalityExpert {
 public:
  ModalityExpert(ExpertShape shape, Rng& rng);
  // Restores an expert; throws ShapeError unless `params` matches the shape.
  ModalityExpert(ExpertShape shape, ParamSet params);

  const ExpertShape& shape() const noexcept { return shape_; }
  const std::string& modality() const noexcept { return shape_.modality; }
  std::size_t embedding_dim() const noexcept { return shape_.embedding_dim(); }
  std::size_t chunk_dim() const noexcept { return shape_.chunk_dim; }
  std::size_t sub_policy_count() const noexcept { return sub_.size(); }
  std::size_t param_count() const noexcept { return params_.scalar_count(); }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  Embedding encode(std::span<const double> modality, std::span<const double> robot_state) const;
  std::vector<double> subpolicy_eps(std::size_t j, std::span<const double> noised, const Embedding& e, int k) const;
  // Mean of the sub-policies active at step k (all of them unless band split).
  std::vector<double> intra_compose(std::span<const double> noised, const Embedding& e, int k) const;
  // Row-wise intra_compose for [batch x chunk] noised actions and [batch x
  // embedding] embeddings, row r at step steps[r]. Bit-identical to the
  // single-row form.
  Tensor intra_compose(const Tensor& noised, const Tensor& embeddings, std::span<const int> steps) const;

  // Inclusive denoising-step band served by sub-policy j.
  std::pair<int, int> band(std::size_t j) const;
  bool active(std::size_t j, int k) const;

  // Batched, differentiable forms. `robot_state` may be empty when the shape
  // has no robot state.
  Var encode(Graph& graph, Var modality, std::optional<Var> robot_state) const;
  Var subpolicy_eps(Graph& graph, std::size_t j, Var noised, Var embedding, Var time_features) const;

 private:
  void build();

  ExpertShape shape_;
  ParamSet params_;
  Mlp encoder_;
  std::vector<Mlp> sub_;
  std::vector<std::vector<double>> time_cache_;
};

struct ExpertTraining {
  ModalityExpert expert;
  std::vector<double> loss_history;
};

// Trains the encoder and all sub-policies of one modality on that modality's
// stream only (plus robot state and actions).
ExpertTraining train_expert(const Dataset& ds, const std::string& modality, const ExpertConfig& expert_cfg,
                            const DiffusionConfig& diffusion, const TrainConfig& train, Rng& rng);

}  // namespace modalcompose
