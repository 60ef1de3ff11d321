#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace modalcompose {

struct ModalityInfo {
  std::string name;
  std::size_t dim = 0;

  friend bool operator==(const ModalityInfo&, const ModalityInfo&) = default;
};

/// Raw per-modality readings of one control step plus the robot state.
/// Modalities keep the order in which the environment declares them.
struct Observation {
  std::vector<std::pair<std::string, std::vector<double>>> modalities;
  std::vector<double> robot_state;

  bool has(std::string_view name) const noexcept;
  // Throws ContractError naming the modality when it is missing.
  const std::vector<double>& modality(std::string_view name) const;
  std::vector<double>& modality(std::string_view name);

  friend bool operator==(const Observation&, const Observation&) = default;
};

}  // namespace modalcompose
