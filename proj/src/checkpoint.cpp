#include "modalcompose/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include "modalcompose/binary_io.hpp"
#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

constexpr std::uint32_t kVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

std::string join_sizes(std::span<const std::size_t> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_strings(std::span<const std::string> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(',', start);
    out.push_back(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FileFormatError("checkpoint metadata '" + key + "' is not an integer: '" + text + "'");
  }
  return v;
}

double to_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw FileFormatError("checkpoint metadata '" + key + "' is not a number: '" + text + "'");
  }
  return v;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(text)) out.push_back(to_size(key, s));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) out.push_back(to_double(key, s));
  return out;
}

void put_context(Checkpoint& c, const RunContext& ctx, const std::string& kind) {
  auto& m = c.metadata;
  m["kind"] = kind;
  m["env"] = ctx.env;
  m["robot_state_dim"] = std::to_string(ctx.robot_state_dim);
  m["norm_lo"] = join_doubles(ctx.norm.lo);
  m["norm_hi"] = join_doubles(ctx.norm.hi);
  m["norm_hash"] = std::to_string(ctx.norm.hash());
  m["diffusion_steps"] = std::to_string(ctx.diffusion.steps);
  m["beta_start"] = fmt_double(ctx.diffusion.beta_start);
  m["beta_end"] = fmt_double(ctx.diffusion.beta_end);
  m["horizon"] = std::to_string(ctx.diffusion.horizon);
  m["variance"] = std::string(to_string(ctx.diffusion.variance));
  m["config_hash"] = std::to_string(ctx.compat_hash());
}

void put_expert_config(Checkpoint& c, const ExpertConfig& cfg) {
  auto& m = c.metadata;
  m["sub_policies"] = std::to_string(cfg.sub_policies);
  m["encoder_hidden"] = join_sizes(cfg.encoder_hidden);
  m["code_dim"] = std::to_string(cfg.code_dim);
  m["score_hidden"] = join_sizes(cfg.score_hidden);
  m["activation"] = std::string(to_string(cfg.activation));
  m["noise_band_split"] = cfg.noise_band_split ? "1" : "0";
  m["time_pairs"] = std::to_string(cfg.time_pairs);
}

ExpertConfig get_expert_config(const Checkpoint& c) {
  ExpertConfig cfg;
  cfg.sub_policies = to_size("sub_policies", c.meta("sub_policies"));
  cfg.encoder_hidden = to_sizes("encoder_hidden", c.meta("encoder_hidden"));
  cfg.code_dim = to_size("code_dim", c.meta("code_dim"));
  cfg.score_hidden = to_sizes("score_hidden", c.meta("score_hidden"));
  try {
    cfg.activation = parse_activation(c.meta("activation"));
  } catch (const ConfigError& e) {
    throw FileFormatError(std::string("checkpoint metadata: ") + e.what());
  }
  cfg.noise_band_split = c.meta("noise_band_split") == "1";
  cfg.time_pairs = to_size("time_pairs", c.meta("time_pairs"));
  return cfg;
}

void expect_kind(const Checkpoint& c, const std::string& kind) {
  if (checkpoint_kind(c) != kind) {
    throw ContractError("expected a " + kind + " checkpoint, got '" + checkpoint_kind(c) + "'");
  }
}

std::vector<ModalityInfo> get_modalities(const Checkpoint& c) {
  const auto names = split_list(c.meta("modalities"));
  const auto dims = to_sizes("modality_dims", c.meta("modality_dims"));
  if (names.size() != dims.size()) throw FileFormatError("checkpoint modality lists differ in length");
  std::vector<ModalityInfo> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i], dims[i]});
  return out;
}

void put_fusion(Checkpoint& c, const FusionShape& s) {
  std::vector<std::string> names;
  std::vector<std::size_t> dims;
  for (const auto& m : s.modalities) {
    names.push_back(m.name);
    dims.push_back(m.dim);
  }
  c.metadata["modalities"] = join_strings(names);
  c.metadata["modality_dims"] = join_sizes(dims);
  c.metadata["chunk_dim"] = std::to_string(s.chunk_dim);
  c.metadata["gate_hidden"] = join_sizes(s.gate_hidden);
  put_expert_config(c, s.config);
}

FusionShape get_fusion(const Checkpoint& c) {
  const RunContext ctx = checkpoint_context(c);
  FusionShape s;
  s.modalities = get_modalities(c);
  s.robot_state_dim = ctx.robot_state_dim;
  s.chunk_dim = to_size("chunk_dim", c.meta("chunk_dim"));
  s.denoise_steps = ctx.diffusion.steps;
  s.beta_start = ctx.diffusion.beta_start;
  s.beta_end = ctx.diffusion.beta_end;
  s.variance = ctx.diffusion.variance;
  s.config = get_expert_config(c);
  s.gate_hidden = to_sizes("gate_hidden", c.meta("gate_hidden"));
  return s;
}

}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw FileFormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::string text;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata entry '" + k + "' cannot be encoded");
    }
    text += k + "=" + v + "\n";
  }
  ByteWriter w;
  w.magic("MCPF");
  w.u32(kVersion);
  w.str32(text);
  const auto& entries = ckpt.params.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("tensor name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ContractError("tensor rank too large");
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(t.data());
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("MCPF");
  const auto version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  const std::string text = r.str32();
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string::npos) r.fail("metadata is not newline terminated");
    const std::string line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) r.fail("metadata line without key: '" + line + "'");
    if (!c.metadata.emplace(line.substr(0, eq), line.substr(eq + 1)).second) {
      r.fail("duplicate metadata key '" + line.substr(0, eq) + "'");
    }
    start = end + 1;
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str16();
    const auto rank = r.u8();
    std::vector<std::size_t> dims(rank);
    std::size_t size = 1;
    for (auto& d : dims) {
      d = r.u32();
      size *= d;
    }
    if (size > r.remaining() / sizeof(double)) r.fail("tensor '" + name + "' is truncated");
    std::vector<double> data(size);
    r.f64s(data);
    if (c.params.contains(name)) r.fail("duplicate tensor '" + name + "'");
    c.params.add(name, Tensor(std::move(dims), std::move(data)));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::uint64_t RunContext::compat_hash() const {
  std::string key = "env=" + env + ";robot=" + std::to_string(robot_state_dim) +
                    ";norm=" + std::to_string(norm.hash()) + ";K=" + std::to_string(diffusion.steps) +
                    ";b0=" + fmt_double(diffusion.beta_start) + ";b1=" + fmt_double(diffusion.beta_end) +
                    ";H=" + std::to_string(diffusion.horizon) + ";var=" + std::string(to_string(diffusion.variance));
  return fnv1a(key);
}

RunContext run_context(const Dataset& ds, const DiffusionConfig& diffusion) {
  return {ds.env_name, ds.robot_state_dim, ds.norm, diffusion};
}

RunContext checkpoint_context(const Checkpoint& c) {
  RunContext ctx;
  ctx.env = c.meta("env");
  ctx.robot_state_dim = to_size("robot_state_dim", c.meta("robot_state_dim"));
  ctx.norm.lo = to_doubles("norm_lo", c.meta("norm_lo"));
  ctx.norm.hi = to_doubles("norm_hi", c.meta("norm_hi"));
  if (ctx.norm.lo.size() != ctx.norm.hi.size()) throw FileFormatError("checkpoint normalization bounds differ in length");
  ctx.diffusion.steps = static_cast<int>(to_size("diffusion_steps", c.meta("diffusion_steps")));
  ctx.diffusion.beta_start = to_double("beta_start", c.meta("beta_start"));
  ctx.diffusion.beta_end = to_double("beta_end", c.meta("beta_end"));
  ctx.diffusion.horizon = to_size("horizon", c.meta("horizon"));
  try {
    ctx.diffusion.variance = parse_posterior_variance(c.meta("variance"));
  } catch (const ConfigError& e) {
    throw FileFormatError(std::string("checkpoint metadata: ") + e.what());
  }
  if (std::to_string(ctx.compat_hash()) != c.meta("config_hash")) {
    throw FileFormatError("checkpoint config_hash does not match its metadata");
  }
  return ctx;
}

const std::string& checkpoint_kind(const Checkpoint& ckpt) { return ckpt.meta("kind"); }

Checkpoint expert_checkpoint(const ModalityExpert& expert, const RunContext& ctx) {
  const auto& s = expert.shape();
  if (s.robot_state_dim != ctx.robot_state_dim) throw ContractError("expert robot-state dimension disagrees with run");
  if (s.denoise_steps != ctx.diffusion.steps) throw ContractError("expert denoising steps disagree with run");
  Checkpoint c;
  c.params = expert.params();
  put_context(c, ctx, "expert");
  put_expert_config(c, s.config);
  c.metadata["modality"] = s.modality;
  c.metadata["modality_dim"] = std::to_string(s.modality_dim);
  c.metadata["chunk_dim"] = std::to_string(s.chunk_dim);
  c.metadata["encoder_spec"] = s.encoder_spec().encode();
  c.metadata["score_spec"] = s.score_spec().encode();
  return c;
}

ModalityExpert load_expert(const Checkpoint& c) {
  expect_kind(c, "expert");
  const RunContext ctx = checkpoint_context(c);
  ExpertShape s;
  s.modality = c.meta("modality");
  s.modality_dim = to_size("modality_dim", c.meta("modality_dim"));
  s.robot_state_dim = ctx.robot_state_dim;
  s.chunk_dim = to_size("chunk_dim", c.meta("chunk_dim"));
  s.denoise_steps = ctx.diffusion.steps;
  s.config = get_expert_config(c);
  return ModalityExpert(s, c.params);
}

Checkpoint router_checkpoint(const Router& router, const RunContext& ctx) {
  Checkpoint c;
  c.params = router.params();
  put_context(c, ctx, "router");
  c.metadata["modalities"] = join_strings(router.modalities());
  c.metadata["modality_dims"] = join_sizes(router.embedding_dims());
  c.metadata["router_hidden"] = join_sizes(router.config().hidden);
  c.metadata["activation"] = std::string(to_string(router.config().activation));
  c.metadata["router_spec"] = router.spec().encode();
  return c;
}

Router load_router(const Checkpoint& c) {
  expect_kind(c, "router");
  checkpoint_context(c);
  RouterConfig cfg;
  cfg.hidden = to_sizes("router_hidden", c.meta("router_hidden"));
  try {
    cfg.activation = parse_activation(c.meta("activation"));
  } catch (const ConfigError& e) {
    throw FileFormatError(std::string("checkpoint metadata: ") + e.what());
  }
  std::vector<std::string> names;
  std::vector<std::size_t> dims;
  for (const auto& m : get_modalities(c)) {
    names.push_back(m.name);
    dims.push_back(m.dim);
  }
  return Router(std::move(names), std::move(dims), cfg, c.params);
}

Checkpoint concat_checkpoint(const ConcatPolicy& policy, const RunContext& ctx) {
  Checkpoint c;
  c.params = policy.params();
  put_context(c, ctx, "concat");
  put_fusion(c, policy.shape());
  return c;
}

ConcatPolicy load_concat(const Checkpoint& c) {
  expect_kind(c, "concat");
  return ConcatPolicy(get_fusion(c), c.params, checkpoint_context(c).norm);
}

Checkpoint moe_checkpoint(const MoEFeaturePolicy& policy, const RunContext& ctx) {
  Checkpoint c;
  c.params = policy.params();
  put_context(c, ctx, "moe");
  put_fusion(c, policy.shape());
  return c;
}

MoEFeaturePolicy load_moe(const Checkpoint& c) {
  expect_kind(c, "moe");
  return MoEFeaturePolicy(get_fusion(c), c.params, checkpoint_context(c).norm);
}

void check_compatible(std::span<const Checkpoint* const> ckpts) {
  if (ckpts.empty()) return;
  const std::string& ref = ckpts[0]->meta("config_hash");
  for (const auto* c : ckpts) {
    if (c->meta("config_hash") != ref) {
      throw ContractError("incompatible checkpoints: " + checkpoint_kind(*ckpts[0]) + " and " + checkpoint_kind(*c) +
                          " were trained under different run settings (config hash " + ref + " vs " +
                          c->meta("config_hash") + ")");
    }
  }
}

}  // namespace modalcompose
