#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "modalcompose/dataset.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/rng.hpp"

namespace modalcompose::testing {

// Two synthetic modalities "a" (dim 3) and "b" (dim 2), robot state of dim 2,
// random readings and one fixed action everywhere. The action norm is the
// identity so normalized targets equal the raw action.
inline Dataset constant_action_dataset(std::vector<double> action, std::size_t episodes = 8,
                                       std::size_t steps = 16, std::uint64_t seed = 1) {
  Dataset ds;
  ds.env_name = "synthetic";
  ds.modalities = {{"a", 3}, {"b", 2}};
  ds.robot_state_dim = 2;
  ds.action_dim = action.size();
  ds.horizon = 1;
  Rng rng(seed);
  for (std::size_t e = 0; e < episodes; ++e) {
    Episode ep;
    for (std::size_t t = 0; t < steps; ++t) {
      DemoStep s;
      for (const auto& m : ds.modalities) {
        std::vector<double> v(m.dim);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        s.obs.modalities.emplace_back(m.name, std::move(v));
      }
      s.obs.robot_state = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      s.action = action;
      ep.steps.push_back(std::move(s));
    }
    ds.episodes.push_back(std::move(ep));
  }
  ds.norm = ActionNorm::identity(action.size());
  return ds;
}

inline ExpertConfig small_expert_config() {
  ExpertConfig c;
  c.encoder_hidden = {16};
  c.code_dim = 8;
  c.score_hidden = {32, 32};
  return c;
}

inline ExpertShape small_shape(const std::string& modality = "a", std::size_t modality_dim = 3,
                               std::size_t robot_dim = 2) {
  return {modality, modality_dim, robot_dim, 2, 50, small_expert_config()};
}

inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace modalcompose::testing
