#include "modalcompose/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "modalcompose/errors.hpp"

namespace modalcompose {

PosteriorVariance parse_posterior_variance(std::string_view token) {
  if (token == "beta") return PosteriorVariance::beta;
  if (token == "beta_tilde") return PosteriorVariance::beta_tilde;
  throw ConfigError("unknown posterior variance '" + std::string(token) + "' (expected beta or beta_tilde)");
}

std::string_view to_string(PosteriorVariance v) noexcept { return v == PosteriorVariance::beta ? "beta" : "beta_tilde"; }

std::size_t NoiseSchedule::index(int k) const {
  if (k < 1 || k > steps()) {
    throw ContractError("denoising step " + std::to_string(k) + " outside 1.." + std::to_string(steps()));
  }
  return static_cast<std::size_t>(k - 1);
}

double NoiseSchedule::sigma_sq(int k, PosteriorVariance variant) const {
  if (variant == PosteriorVariance::beta || k == 1) return beta(k);
  return beta(k) * (1.0 - alpha_bar(k - 1)) / (1.0 - alpha_bar(k));
}

NoiseSchedule make_schedule(int K, double beta_start, double beta_end) {
  if (K < 1) throw ConfigError("schedule needs K >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta_.resize(K);
  s.alpha_.resize(K);
  s.alpha_bar_.resize(K);
  double prod = 1.0;
  for (int i = 0; i < K; ++i) {
    const double t = K == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(K - 1);
    s.beta_[i] = beta_start + (beta_end - beta_start) * t;
    s.alpha_[i] = 1.0 - s.beta_[i];
    prod *= s.alpha_[i];
    s.alpha_bar_[i] = prod;
  }
  return s;
}

std::vector<double> forward_noise(std::span<const double> a0, int k, const NoiseSchedule& sched,
                                  std::span<const double> noise) {
  if (noise.size() != a0.size()) throw ShapeError("forward_noise: noise and action dims differ");
  const double ab = sched.alpha_bar(k);
  const double keep = std::sqrt(ab);
  const double spread = std::sqrt(1.0 - ab);
  std::vector<double> out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i) out[i] = keep * a0[i] + spread * noise[i];
  return out;
}

NoisedAction forward_noise(std::span<const double> a0, int k, const NoiseSchedule& sched, Rng& rng) {
  sched.alpha_bar(k);  // range check before consuming randomness
  NoisedAction out;
  out.noise.resize(a0.size());
  rng.fill_normal(out.noise);
  out.noised = forward_noise(a0, k, sched, out.noise);
  return out;
}

std::vector<double> ddpm_sample(const ScoreFn& score, std::size_t dim, const NoiseSchedule& sched, Rng& rng,
                                const SamplerOptions& options) {
  if (sched.steps() < 1) throw ContractError("ddpm_sample: empty schedule");
  std::vector<double> a;
  if (options.initial) {
    if (options.initial->size() != dim) throw ShapeError("ddpm_sample: initial sample has wrong dimension");
    a = *options.initial;
  } else {
    a.resize(dim);
    rng.fill_normal(a);
  }
  std::vector<double> z(dim, 0.0);
  for (int k = sched.steps(); k >= 1; --k) {
    const std::vector<double> eps = score(a, k);
    if (eps.size() != dim) throw ShapeError("ddpm_sample: score output has wrong dimension");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(k));
    const double coef = sched.beta(k) / std::sqrt(1.0 - sched.alpha_bar(k));
    const bool noisy = options.inject_noise && k > 1;
    if (noisy) rng.fill_normal(z);
    const double sigma = noisy ? std::sqrt(sched.sigma_sq(k, options.variance)) : 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      a[i] = inv_sqrt_alpha * (a[i] - coef * eps[i]) + (noisy ? sigma * z[i] : 0.0);
      if (!std::isfinite(a[i])) {
        throw NumericError("ddpm_sample: non-finite value at denoising step " + std::to_string(k));
      }
    }
  }
  if (options.clamp) {
    for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
  }
  return a;
}

DenoiseBatch make_denoise_batch(const Tensor& a0, const NoiseSchedule& sched, Rng& rng, int k_lo, int k_hi) {
  if (k_lo < 1 || k_hi > sched.steps() || k_lo > k_hi) throw ContractError("denoise step band out of range");
  const std::size_t rows = a0.rows(), cols = a0.cols();
  DenoiseBatch b{Tensor({rows, cols}), Tensor({rows, cols}), std::vector<int>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    b.steps[r] = rng.uniform_int(k_lo, k_hi);
    rng.fill_normal(b.noise.row_span(r));
    const auto noised = forward_noise(a0.row_span(r), b.steps[r], sched, b.noise.row_span(r));
    std::copy(noised.begin(), noised.end(), b.noised.row_span(r).begin());
  }
  return b;
}

Var denoise_loss(Graph& graph, const BatchScoreFn& score, const Tensor& a0, const NoiseSchedule& sched, Rng& rng,
                 int k_lo, int k_hi) {
  if (a0.size() == 0) throw ContractError("denoise_loss: empty batch");
  if (k_hi == 0) k_hi = sched.steps();
  DenoiseBatch b = make_denoise_batch(a0, sched, rng, k_lo, k_hi);
  const Var noised = graph.constant(std::move(b.noised));
  const Var predicted = score(graph, noised, b.steps);
  return graph.mean_sq_row_norm(predicted, graph.constant(std::move(b.noise)));
}

std::vector<double> timestep_embedding(int k, int K, std::size_t pairs) {
  std::vector<double> out(2 * pairs);
  const double x = static_cast<double>(k) / static_cast<double>(K);
  for (std::size_t j = 0; j < pairs; ++j) {
    const double exponent = pairs == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(pairs - 1);
    const double freq = std::pow(static_cast<double>(K), exponent);
    out[2 * j] = std::sin(freq * x);
    out[2 * j + 1] = std::cos(freq * x);
  }
  return out;
}

Tensor timestep_embedding(std::span<const int> steps, int K, std::size_t pairs) {
  Tensor out({steps.size(), 2 * pairs});
  for (std::size_t r = 0; r < steps.size(); ++r) {
    const auto row = timestep_embedding(steps[r], K, pairs);
    std::copy(row.begin(), row.end(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace modalcompose
