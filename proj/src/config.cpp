#include "modalcompose/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view text) {
  std::size_t v = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("expected a nonnegative integer, got '" + std::string(text) + "'");
  }
  return v;
}

double to_double(std::string_view text) {
  const std::string s(trim(text));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ConfigError("expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

bool to_bool(std::string_view text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("expected true or false, got '" + std::string(text) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"env.name", [](RunConfig& c, std::string_view v) { c.env.kind = parse_env_kind(trim(v)); }},
      {"env.contact_radius", [](RunConfig& c, std::string_view v) { c.env.contact_radius = to_double(v); }},
      {"env.success_radius", [](RunConfig& c, std::string_view v) { c.env.success_radius = to_double(v); }},
      {"env.max_steps", [](RunConfig& c, std::string_view v) { c.env.max_steps = static_cast<int>(to_size(v)); }},
      {"env.max_speed", [](RunConfig& c, std::string_view v) { c.env.max_speed = to_double(v); }},
      {"env.expert_noise", [](RunConfig& c, std::string_view v) { c.env.expert_noise = to_double(v); }},
      {"env.approach_offset", [](RunConfig& c, std::string_view v) { c.env.approach_offset = to_double(v); }},
      {"env.occlusion", [](RunConfig& c, std::string_view v) {
         const auto b = parse_double_list(v);
         if (b.size() != 4) throw ConfigError("occlusion needs x_lo,x_hi,y_lo,y_hi");
         c.env.occlusion = {b[0], b[1], b[2], b[3]};
       }},
      {"data.episodes", [](RunConfig& c, std::string_view v) { c.data_episodes = to_size(v); }},
      {"data.path", [](RunConfig& c, std::string_view v) { c.data_path = std::string(trim(v)); }},
      {"expert.sub_policies", [](RunConfig& c, std::string_view v) { c.expert.sub_policies = to_size(v); }},
      {"expert.encoder_hidden", [](RunConfig& c, std::string_view v) { c.expert.encoder_hidden = parse_size_list(v); }},
      {"expert.code_dim", [](RunConfig& c, std::string_view v) { c.expert.code_dim = to_size(v); }},
      {"expert.score_hidden", [](RunConfig& c, std::string_view v) { c.expert.score_hidden = parse_size_list(v); }},
      {"expert.activation", [](RunConfig& c, std::string_view v) { c.expert.activation = parse_activation(trim(v)); }},
      {"expert.noise_band_split", [](RunConfig& c, std::string_view v) { c.expert.noise_band_split = to_bool(v); }},
      {"expert.time_pairs", [](RunConfig& c, std::string_view v) { c.expert.time_pairs = to_size(v); }},
      {"diffusion.steps", [](RunConfig& c, std::string_view v) { c.diffusion.steps = static_cast<int>(to_size(v)); }},
      {"diffusion.beta_start", [](RunConfig& c, std::string_view v) { c.diffusion.beta_start = to_double(v); }},
      {"diffusion.beta_end", [](RunConfig& c, std::string_view v) { c.diffusion.beta_end = to_double(v); }},
      {"diffusion.horizon", [](RunConfig& c, std::string_view v) { c.diffusion.horizon = to_size(v); }},
      {"diffusion.variance",
       [](RunConfig& c, std::string_view v) { c.diffusion.variance = parse_posterior_variance(trim(v)); }},
      {"train.steps", [](RunConfig& c, std::string_view v) { c.train.steps = to_size(v); }},
      {"train.batch", [](RunConfig& c, std::string_view v) { c.train.batch = to_size(v); }},
      {"train.learning_rate", [](RunConfig& c, std::string_view v) { c.train.learning_rate = to_double(v); }},
      {"train.router_steps", [](RunConfig& c, std::string_view v) { c.router_steps = to_size(v); }},
      {"train.router_hidden", [](RunConfig& c, std::string_view v) { c.router.hidden = parse_size_list(v); }},
      {"train.joint", [](RunConfig& c, std::string_view v) { c.joint = to_bool(v); }},
      {"eval.episodes", [](RunConfig& c, std::string_view v) { c.eval_episodes = to_size(v); }},
      {"eval.strategy", [](RunConfig& c, std::string_view v) { c.strategy = parse_strategy(trim(v)); }},
      {"run.seed", [](RunConfig& c, std::string_view v) { c.seed = to_size(v); }},
      {"run.modalities", [](RunConfig& c, std::string_view v) { c.modalities = split_csv(v); }},
      {"run.methods", [](RunConfig& c, std::string_view v) { c.methods = split_csv(v); }},
  };
  return table;
}

}  // namespace

std::vector<std::string> split_csv(std::string_view text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(',', start);
    const auto item = trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (item.empty()) throw ConfigError("empty item in list '" + std::string(text) + "'");
    out.emplace_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  for (const auto& s : split_csv(text)) out.push_back(to_double(s));
  return out;
}

std::vector<std::size_t> parse_size_list(std::string_view text) {
  std::vector<std::size_t> out;
  for (const auto& s : split_csv(text)) out.push_back(to_size(s));
  return out;
}

std::vector<std::string> RunConfig::active_modalities() const {
  std::vector<std::string> out;
  for (const auto& m : env.modalities()) {
    if (modalities.empty() || std::find(modalities.begin(), modalities.end(), m.name) != modalities.end()) {
      out.push_back(m.name);
    }
  }
  return out;
}

std::vector<std::string> RunConfig::resolved_methods() const {
  if (!methods.empty()) return methods;
  std::vector<std::string> out;
  for (const auto& m : active_modalities()) out.push_back("expert:" + m);
  out.insert(out.end(), {"router", "concat", "moe"});
  return out;
}

void RunConfig::validate() const {
  env.validate();
  const auto available = env.modalities();
  for (const auto& m : modalities) {
    if (std::none_of(available.begin(), available.end(), [&](const ModalityInfo& i) { return i.name == m; })) {
      throw ConfigError("modality '" + m + "' does not exist in " + env.name());
    }
  }
  if (data_episodes == 0) throw ConfigError("data.episodes must be >= 1");
  if (expert.sub_policies == 0) throw ConfigError("expert.sub_policies must be >= 1");
  if (expert.code_dim == 0) throw ConfigError("expert.code_dim must be >= 1");
  make_schedule(diffusion.steps, diffusion.beta_start, diffusion.beta_end);
  if (diffusion.horizon == 0) throw ConfigError("diffusion.horizon must be >= 1");
  if (train.batch == 0) throw ConfigError("train.batch must be >= 1");
  if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (eval_episodes == 0) throw ConfigError("eval.episodes must be >= 1");
  for (const auto& m : methods) {
    if (m == "router" || m == "concat" || m == "moe") continue;
    if (m.starts_with("expert:")) {
      const auto name = m.substr(7);
      const auto act = active_modalities();
      if (std::find(act.begin(), act.end(), name) == act.end()) {
        throw ConfigError("method '" + m + "' names a modality that is not in use");
      }
      continue;
    }
    throw ConfigError("unknown method '" + m + "' (expected expert:<modality>, router, concat or moe)");
  }
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      static const char* known[] = {"env", "data", "expert", "diffusion", "train", "eval", "run"};
      if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return section == k; })) {
        throw ConfigError(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where() + "expected key = value");
    if (section.empty()) throw ConfigError(where() + "key outside of any section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where() + "unknown key '" + key + "'");
    try {
      it->second(cfg, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace modalcompose
