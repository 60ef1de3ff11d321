#include "modalcompose/observation.hpp"

#include <algorithm>

#include "modalcompose/errors.hpp"

namespace modalcompose {

bool Observation::has(std::string_view name) const noexcept {
  return std::any_of(modalities.begin(), modalities.end(), [&](const auto& m) { return m.first == name; });
}

const std::vector<double>& Observation::modality(std::string_view name) const {
  for (const auto& [n, v] : modalities) {
    if (n == name) return v;
  }
  throw ContractError("observation has no modality '" + std::string(name) + "'");
}

std::vector<double>& Observation::modality(std::string_view name) {
  return const_cast<std::vector<double>&>(std::as_const(*this).modality(name));
}

}  // namespace modalcompose
