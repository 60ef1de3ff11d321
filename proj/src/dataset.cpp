#include "modalcompose/dataset.hpp"

#include <algorithm>
#include <bit>

#include "modalcompose/binary_io.hpp"
#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr double kMinRange = 1e-9;

}  // namespace

ActionNorm ActionNorm::identity(std::size_t dim) { return {std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)}; }

std::vector<double> ActionNorm::normalize(std::span<const double> a) const {
  if (a.size() != dim()) throw ShapeError("action has " + std::to_string(a.size()) + " coordinates, norm has " +
                                          std::to_string(dim()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double range = hi[i] - lo[i];
    out[i] = range < kMinRange ? a[i] - lo[i] : 2.0 * (a[i] - lo[i]) / range - 1.0;
  }
  return out;
}

std::vector<double> ActionNorm::denormalize(std::span<const double> a) const {
  if (a.size() % dim() != 0) throw ShapeError("action chunk size is not a multiple of the action dim");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t c = i % dim();
    const double range = hi[c] - lo[c];
    out[i] = range < kMinRange ? a[i] + lo[c] : lo[c] + (a[i] + 1.0) * 0.5 * range;
  }
  return out;
}

std::uint64_t ActionNorm::hash() const noexcept {
  std::string key;
  for (const auto* v : {&lo, &hi}) {
    for (double x : *v) key += std::to_string(std::bit_cast<std::uint64_t>(x)) + ",";
    key += ";";
  }
  return fnv1a(key);
}

std::size_t Dataset::step_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  return n;
}

bool Dataset::has_modality(const std::string& name) const noexcept {
  return std::any_of(modalities.begin(), modalities.end(), [&](const auto& m) { return m.name == name; });
}

const ModalityInfo& Dataset::modality(const std::string& name) const {
  for (const auto& m : modalities) {
    if (m.name == name) return m;
  }
  throw ConfigError("dataset has no modality '" + name + "'");
}

Dataset Dataset::keep_modalities(std::span<const std::string> names) const {
  for (const auto& n : names) modality(n);
  Dataset out = *this;
  auto keep = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  std::erase_if(out.modalities, [&](const ModalityInfo& m) { return !keep(m.name); });
  for (auto& e : out.episodes) {
    for (auto& s : e.steps) std::erase_if(s.obs.modalities, [&](const auto& m) { return !keep(m.first); });
  }
  return out;
}

void Dataset::compute_norm() {
  norm.lo.assign(action_dim, 0.0);
  norm.hi.assign(action_dim, 0.0);
  bool first = true;
  for (const auto& e : episodes) {
    for (const auto& s : e.steps) {
      for (std::size_t i = 0; i < action_dim; ++i) {
        norm.lo[i] = first ? s.action[i] : std::min(norm.lo[i], s.action[i]);
        norm.hi[i] = first ? s.action[i] : std::max(norm.hi[i], s.action[i]);
      }
      first = false;
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.magic("MCDS");
  w.u32(kDatasetVersion);
  w.str16(ds.env_name);
  w.u32(static_cast<std::uint32_t>(ds.episodes.size()));
  w.u32(static_cast<std::uint32_t>(ds.modalities.size()));
  for (const auto& m : ds.modalities) {
    w.str16(m.name);
    w.u32(static_cast<std::uint32_t>(m.dim));
  }
  w.u32(static_cast<std::uint32_t>(ds.robot_state_dim));
  w.u32(static_cast<std::uint32_t>(ds.action_dim));
  w.u32(static_cast<std::uint32_t>(ds.horizon));
  for (const auto& e : ds.episodes) {
    w.u32(static_cast<std::uint32_t>(e.steps.size()));
    for (const auto& s : e.steps) {
      for (const auto& m : ds.modalities) {
        const auto& v = s.obs.modality(m.name);
        if (v.size() != m.dim) throw ShapeError("modality '" + m.name + "' has the wrong dimension");
        w.f64s(v);
      }
      if (s.obs.robot_state.size() != ds.robot_state_dim || s.action.size() != ds.action_dim) {
        throw ShapeError("dataset step has inconsistent robot-state or action dimension");
      }
      w.f64s(s.obs.robot_state);
      w.f64s(s.action);
    }
  }
  if (ds.norm.dim() != ds.action_dim) throw ShapeError("dataset normalization stats have the wrong dimension");
  w.f64s(ds.norm.lo);
  w.f64s(ds.norm.hi);
  return w.bytes();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  r.expect_magic("MCDS");
  if (const auto v = r.u32(); v != kDatasetVersion) r.fail("unsupported version " + std::to_string(v));
  Dataset ds;
  ds.env_name = r.str16();
  const std::uint32_t episodes = r.u32();
  const std::uint32_t modality_count = r.u32();
  for (std::uint32_t i = 0; i < modality_count; ++i) {
    ModalityInfo m;
    m.name = r.str16();
    m.dim = r.u32();
    ds.modalities.push_back(std::move(m));
  }
  ds.robot_state_dim = r.u32();
  ds.action_dim = r.u32();
  ds.horizon = r.u32();
  if (ds.horizon == 0) r.fail("horizon must be >= 1");
  // Every step stores at least its action, so the counts are bounded by the size.
  if (episodes > r.remaining() / 4) r.fail("episode count exceeds file size");
  ds.episodes.resize(episodes);
  for (auto& e : ds.episodes) {
    const std::uint32_t steps = r.u32();
    if (steps > r.remaining() / 8 + 1) r.fail("step count exceeds file size");
    e.steps.resize(steps);
    for (auto& s : e.steps) {
      for (const auto& m : ds.modalities) {
        std::vector<double> v(m.dim);
        r.f64s(v);
        s.obs.modalities.emplace_back(m.name, std::move(v));
      }
      s.obs.robot_state.resize(ds.robot_state_dim);
      r.f64s(s.obs.robot_state);
      s.action.resize(ds.action_dim);
      r.f64s(s.action);
    }
  }
  ds.norm.lo.resize(ds.action_dim);
  ds.norm.hi.resize(ds.action_dim);
  r.f64s(ds.norm.lo);
  r.f64s(ds.norm.hi);
  if (!r.at_end()) r.fail("trailing bytes");
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, encode_dataset(ds)); }

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_dataset(bytes);
  } catch (const FileFormatError& e) {
    throw FileFormatError(path.string() + ": " + e.what());
  }
}

Dataset generate_dataset(const EnvSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("dataset needs at least one episode");
  spec.validate();
  Dataset ds;
  ds.env_name = spec.name();
  ds.modalities = spec.modalities();
  ds.robot_state_dim = spec.robot_state_dim();
  ds.action_dim = spec.action_dim();
  ds.horizon = 1;
  const std::size_t max_attempts = 100 * n + 1000;
  for (std::uint64_t attempt = 0; ds.episodes.size() < n; ++attempt) {
    if (attempt >= max_attempts) throw ConfigError("scripted demonstrator keeps failing; check the env spec");
    Rng rng(stream_key(seed, attempt));
    auto [state, obs] = env_reset(spec, rng);
    Episode ep;
    while (!state.done) {
      auto action = scripted_expert(state, spec, rng);
      auto tr = env_step(spec, state, action);
      ep.steps.push_back({std::move(obs), std::move(action)});
      state = tr.state;
      obs = std::move(tr.obs);
    }
    if (state.success) ds.episodes.push_back(std::move(ep));
  }
  ds.compute_norm();
  return ds;
}

TrainingTable make_training_table(const Dataset& ds, std::span<const std::string> modalities, std::size_t horizon) {
  if (horizon == 0) throw ConfigError("action horizon must be >= 1");
  TrainingTable t;
  t.rows = ds.step_count();
  if (t.rows == 0) throw ContractError("dataset has no steps");
  const std::size_t chunk = ds.action_dim * horizon;
  t.robot_state = ds.robot_state_dim ? Tensor({t.rows, ds.robot_state_dim}) : Tensor();
  t.chunks = Tensor({t.rows, chunk});
  for (const auto& name : modalities) t.modalities.emplace(name, Tensor({t.rows, ds.modality(name).dim}));
  std::size_t r = 0;
  for (const auto& e : ds.episodes) {
    for (std::size_t i = 0; i < e.steps.size(); ++i, ++r) {
      const auto& s = e.steps[i];
      for (const auto& name : modalities) {
        const auto& v = s.obs.modality(name);
        std::copy(v.begin(), v.end(), t.modalities.at(name).row_span(r).begin());
      }
      if (ds.robot_state_dim) std::copy(s.obs.robot_state.begin(), s.obs.robot_state.end(), t.robot_state.row_span(r).begin());
      auto dst = t.chunks.row_span(r);
      for (std::size_t h = 0; h < horizon; ++h) {
        const auto& a = e.steps[std::min(i + h, e.steps.size() - 1)].action;
        const auto na = ds.norm.normalize(a);
        std::copy(na.begin(), na.end(), dst.begin() + h * ds.action_dim);
      }
    }
  }
  return t;
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t cols = src.cols();
  Tensor out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto from = src.row_span(rows[i]);
    std::copy(from.begin(), from.end(), out.row_span(i).begin());
  }
  return out;
}

std::vector<std::size_t> sample_rows(std::size_t available, std::size_t count, Rng& rng) {
  if (available == 0) throw ContractError("cannot sample from an empty table");
  std::vector<std::size_t> out(count);
  for (auto& r : out) r = static_cast<std::size_t>(rng.next_u64() % available);
  return out;
}

}  // namespace modalcompose
