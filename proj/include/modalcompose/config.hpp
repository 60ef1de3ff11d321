#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/env.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/router.hpp"

namespace modalcompose {

/// Everything a run needs. Loaded from `[section]` / `key = value` text;
/// `#` and `;` start comments. Unknown sections and keys are errors.
///
///   [env]       name, contact_radius, success_radius, max_steps, max_speed,
///               expert_noise, approach_offset, occlusion = x_lo,x_hi,y_lo,y_hi
///   [data]      episodes, path
///   [expert]    sub_policies, encoder_hidden, code_dim, score_hidden,
///               activation, noise_band_split, time_pairs
///   [diffusion] steps, beta_start, beta_end, horizon, variance
///   [train]     steps, batch, learning_rate, router_steps, router_hidden, joint
///   [eval]      episodes, strategy
///   [run]       seed, modalities, methods
struct RunConfig {
  EnvSpec env;
  std::size_t data_episodes = 100;
  std::string data_path;
  ExpertConfig expert;
  DiffusionConfig diffusion;
  TrainConfig train;
  std::size_t router_steps = 2000;
  RouterConfig router;
  bool joint = false;
  std::size_t eval_episodes = 200;
  RoutingStrategy strategy = RoutingStrategy::soft;
  std::uint64_t seed = 0;
  std::vector<std::string> modalities;  // empty: every modality of the env
  // Empty: expert:<m> for every active modality, router, concat, moe.
  std::vector<std::string> methods;

  // Modalities actually used, in environment order.
  std::vector<std::string> active_modalities() const;
  std::vector<std::string> resolved_methods() const;
  // Throws ConfigError for inconsistent settings.
  void validate() const;
};

// Parses config text; `origin` labels error messages.
RunConfig parse_run_config(std::string_view text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

// Comma-separated list helpers shared with the command line.
std::vector<std::string> split_csv(std::string_view text);
std::vector<double> parse_double_list(std::string_view text);
std::vector<std::size_t> parse_size_list(std::string_view text);

}  // namespace modalcompose
