#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "modalcompose/env.hpp"
#include "modalcompose/observation.hpp"
#include "modalcompose/rng.hpp"
#include "modalcompose/tensor.hpp"

namespace modalcompose {

/// Per-coordinate affine map of actions onto [-1, 1] from dataset min/max.
/// A coordinate with (near) zero range maps its value to 0 with unit half-width.
struct ActionNorm {
  std::vector<double> lo, hi;

  static ActionNorm identity(std::size_t dim);
  std::size_t dim() const noexcept { return lo.size(); }
  std::vector<double> normalize(std::span<const double> a) const;
  std::vector<double> denormalize(std::span<const double> a) const;
  // Stable hash of the exact bit patterns, used for compatibility checks.
  std::uint64_t hash() const noexcept;

  friend bool operator==(const ActionNorm&, const ActionNorm&) = default;
};

struct DemoStep {
  Observation obs;
  std::vector<double> action;

  friend bool operator==(const DemoStep&, const DemoStep&) = default;
};

struct Episode {
  std::vector<DemoStep> steps;

  friend bool operator==(const Episode&, const Episode&) = default;
};

struct Dataset {
  std::string env_name;
  std::vector<ModalityInfo> modalities;
  std::size_t robot_state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t horizon = 1;
  std::vector<Episode> episodes;
  ActionNorm norm;

  std::size_t step_count() const noexcept;
  bool has_modality(const std::string& name) const noexcept;
  const ModalityInfo& modality(const std::string& name) const;
  // Copy keeping only the listed modalities (in their original order).
  Dataset keep_modalities(std::span<const std::string> names) const;
  // Recomputes `norm` from the stored actions.
  void compute_norm();

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// MCDS binary layout (all integers and reals little-endian):
//   "MCDS", u32 version = 1, u16 + env name, u32 episode count,
//   u32 modality count, per modality: u16 + name, u32 dim,
//   u32 robot-state dim, u32 action dim, u32 horizon,
//   per episode: u32 step count, per step: modality vectors in declared order,
//   robot state, action (f64 each),
//   then action min[action dim], action max[action dim] (f64).
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Rolls out the scripted demonstrator, keeping successful episodes until `n`
// are collected. Attempt j uses the stream stream_key(seed, j).
Dataset generate_dataset(const EnvSpec& spec, std::size_t n, std::uint64_t seed);

/// Flattened (observation, normalized action chunk) rows for training.
struct TrainingTable {
  std::map<std::string, Tensor> modalities;
  Tensor robot_state;
  Tensor chunks;  // [rows x action_dim * horizon], normalized
  std::size_t rows = 0;
};

// Chunk of row t is actions t .. t+H-1 of its episode, repeating the last
// action past the episode end. Only the listed modalities are extracted.
TrainingTable make_training_table(const Dataset& ds, std::span<const std::string> modalities, std::size_t horizon);

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows);
std::vector<std::size_t> sample_rows(std::size_t available, std::size_t count, Rng& rng);

}  // namespace modalcompose
