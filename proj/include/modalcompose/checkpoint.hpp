#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "modalcompose/baselines.hpp"
#include "modalcompose/dataset.hpp"
#include "modalcompose/experts.hpp"
#include "modalcompose/router.hpp"
#include "modalcompose/tensor.hpp"

namespace modalcompose {

/// Named tensors plus `key=value` metadata.
///
/// MCPF layout (little-endian): "MCPF", u32 version = 1, u32 metadata length
/// + UTF-8 text (one `key=value` per line, keys sorted), u32 tensor count, per
/// tensor: u16 + name, u8 rank, rank x u32 dims, f64 payload row-major.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ParamSet params;

  // Throws FileFormatError naming the missing key.
  const std::string& meta(const std::string& key) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Settings every checkpoint of one run shares. Checkpoints can only be
// composed when their compatibility hashes agree.
struct RunContext {
  std::string env;
  std::size_t robot_state_dim = 0;
  ActionNorm norm;
  DiffusionConfig diffusion;

  std::uint64_t compat_hash() const;
};

RunContext run_context(const Dataset& ds, const DiffusionConfig& diffusion);

Checkpoint expert_checkpoint(const ModalityExpert& expert, const RunContext& ctx);
Checkpoint router_checkpoint(const Router& router, const RunContext& ctx);
Checkpoint concat_checkpoint(const ConcatPolicy& policy, const RunContext& ctx);
Checkpoint moe_checkpoint(const MoEFeaturePolicy& policy, const RunContext& ctx);

// Reads the shared settings back. Throws FileFormatError on malformed
// metadata.
RunContext checkpoint_context(const Checkpoint& ckpt);
// "expert", "router", "concat" or "moe".
const std::string& checkpoint_kind(const Checkpoint& ckpt);

ModalityExpert load_expert(const Checkpoint& ckpt);
Router load_router(const Checkpoint& ckpt);
ConcatPolicy load_concat(const Checkpoint& ckpt);
MoEFeaturePolicy load_moe(const Checkpoint& ckpt);

// Throws ContractError unless every checkpoint carries the same
// compatibility hash.
void check_compatible(std::span<const Checkpoint* const> ckpts);

}  // namespace modalcompose
