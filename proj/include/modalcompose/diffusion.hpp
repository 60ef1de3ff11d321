#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "modalcompose/autograd.hpp"
#include "modalcompose/rng.hpp"
#include "modalcompose/tensor.hpp"

namespace modalcompose {

// Reverse-process noise variance: sigma_k^2 = beta_k, or the posterior
// variance beta~_k = beta_k (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k).
enum class PosteriorVariance { beta, beta_tilde };

PosteriorVariance parse_posterior_variance(std::string_view token);
std::string_view to_string(PosteriorVariance v) noexcept;

/// DDPM schedule over denoising steps k = 1..K. Accessors are 1-based.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int k) const { return beta_.at(index(k)); }
  double alpha(int k) const { return alpha_.at(index(k)); }
  double alpha_bar(int k) const { return alpha_bar_.at(index(k)); }
  double beta_start() const noexcept { return beta_.front(); }
  double beta_end() const noexcept { return beta_.back(); }
  // sigma_k^2 for the chosen reverse-process variance.
  double sigma_sq(int k, PosteriorVariance variant) const;

  friend NoiseSchedule make_schedule(int K, double beta_start, double beta_end);
  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::size_t index(int k) const;

  std::vector<double> beta_, alpha_, alpha_bar_;
};

// Linear beta from beta_start (k = 1) to beta_end (k = K).
NoiseSchedule make_schedule(int K, double beta_start, double beta_end);

struct NoisedAction {
  std::vector<double> noised;
  std::vector<double> noise;
};

// a^k = sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps with the given eps.
std::vector<double> forward_noise(std::span<const double> a0, int k, const NoiseSchedule& sched,
                                  std::span<const double> noise);
// Same with eps drawn from `rng`.
NoisedAction forward_noise(std::span<const double> a0, int k, const NoiseSchedule& sched, Rng& rng);

// Predicted noise for the noised action a^k at step k, with the condition bound
// by the caller.
using ScoreFn = std::function<std::vector<double>(std::span<const double> noised, int k)>;

struct SamplerOptions {
  bool inject_noise = true;
  // Starting point a^K; drawn from N(0, I) when absent.
  std::optional<std::vector<double>> initial;
  PosteriorVariance variance = PosteriorVariance::beta;
  bool clamp = true;
};

// Ancestral sampling a^K -> a^0; output clamped to [-1, 1] per coordinate.
std::vector<double> ddpm_sample(const ScoreFn& score, std::size_t dim, const NoiseSchedule& sched, Rng& rng,
                                const SamplerOptions& options = {});

/// A differentiable batched noise predictor: row r of `noised` is a^{k_r}.
/// Conditions are bound per row by the caller.
using BatchScoreFn = std::function<Var(Graph& graph, Var noised, std::span<const int> steps)>;

struct DenoiseBatch {
  Tensor noised;
  Tensor noise;
  std::vector<int> steps;
};

// Draws k uniform in [k_lo, k_hi] and eps ~ N(0, I) for every row of a0.
DenoiseBatch make_denoise_batch(const Tensor& a0, const NoiseSchedule& sched, Rng& rng, int k_lo, int k_hi);

// Mean over the batch of ||eps - eps_hat(a^k, k)||^2 with k uniform in
// [k_lo, k_hi] (defaults to the full range 1..K).
Var denoise_loss(Graph& graph, const BatchScoreFn& score, const Tensor& a0, const NoiseSchedule& sched, Rng& rng,
                 int k_lo = 1, int k_hi = 0);

// Sinusoidal features of k / K: (sin f_j x, cos f_j x) for `pairs` frequencies
// spaced geometrically from 1 to K.
std::vector<double> timestep_embedding(int k, int K, std::size_t pairs = 8);
Tensor timestep_embedding(std::span<const int> steps, int K, std::size_t pairs = 8);

}  // namespace modalcompose
