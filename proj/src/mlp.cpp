#include "modalcompose/mlp.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "modalcompose/errors.hpp"

namespace modalcompose {

Activation parse_activation(std::string_view token) {
  if (token == "tanh") return Activation::tanh;
  if (token == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(token) + "' (expected tanh or relu)");
}

std::string_view to_string(Activation a) noexcept { return a == Activation::tanh ? "tanh" : "relu"; }

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) throw ShapeError("MLP input and output dims must be >= 1");
  for (auto w : hidden_widths) {
    if (w == 0) throw ShapeError("MLP hidden widths must be >= 1");
  }
}

std::size_t MlpSpec::param_count() const noexcept {
  std::size_t n = 0;
  std::size_t fan_in = input_dim;
  for (auto w : hidden_widths) {
    n += fan_in * w + w;
    fan_in = w;
  }
  return n + fan_in * output_dim + output_dim;
}

std::string MlpSpec::encode() const {
  std::ostringstream os;
  os << input_dim << ':';
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) os << (i ? "," : "") << hidden_widths[i];
  os << ':' << output_dim << ':' << to_string(activation);
  return os.str();
}

namespace {

std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("bad integer '" + std::string(s) + "'");
  return v;
}

}  // namespace

MlpSpec MlpSpec::decode(std::string_view text) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ':') {
      fields.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  if (fields.size() != 4) throw ConfigError("bad MLP spec '" + std::string(text) + "'");
  MlpSpec spec;
  spec.input_dim = parse_size(fields[0]);
  std::string_view hidden = fields[1];
  while (!hidden.empty()) {
    const auto comma = hidden.find(',');
    spec.hidden_widths.push_back(parse_size(hidden.substr(0, comma)));
    hidden = comma == std::string_view::npos ? std::string_view() : hidden.substr(comma + 1);
  }
  spec.output_dim = parse_size(fields[2]);
  spec.activation = parse_activation(fields[3]);
  spec.validate();
  return spec;
}

Mlp::Mlp(std::string prefix, MlpSpec spec) : prefix_(std::move(prefix)), spec_(std::move(spec)) { spec_.validate(); }

std::string Mlp::weight_name(std::size_t layer) const { return prefix_ + "l" + std::to_string(layer) + ".W"; }
std::string Mlp::bias_name(std::size_t layer) const { return prefix_ + "l" + std::to_string(layer) + ".b"; }

void Mlp::init(ParamSet& params, Rng& rng) const {
  std::size_t fan_in = spec_.input_dim;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const std::size_t fan_out = l < spec_.hidden_widths.size() ? spec_.hidden_widths[l] : spec_.output_dim;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (auto& v : w.data()) v = rng.uniform(-limit, limit);
    params.add(weight_name(l), std::move(w));
    params.add(bias_name(l), Tensor({fan_out}, 0.0));
    fan_in = fan_out;
  }
}

Var Mlp::forward(Graph& graph, const ParamSet& params, Var input) const {
  const Tensor& x = graph.value(input);
  if (x.cols() != spec_.input_dim) {
    throw ShapeError("MLP '" + prefix_ + "' expects input width " + std::to_string(spec_.input_dim) + ", got " +
                     shape_string(x.dims()));
  }
  Var h = input;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    h = graph.add_row(graph.matmul(h, graph.param(params, weight_name(l))), graph.param(params, bias_name(l)));
    if (l + 1 < spec_.layer_count()) {
      h = spec_.activation == Activation::tanh ? graph.tanh(h) : graph.relu(h);
    }
  }
  return h;
}

Tensor Mlp::forward(const ParamSet& params, const Tensor& input) const {
  Graph graph(false);
  return graph.value(forward(graph, params, graph.constant(input)));
}

}  // namespace modalcompose
