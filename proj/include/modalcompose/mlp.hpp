#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/autograd.hpp"
#include "modalcompose/rng.hpp"
#include "modalcompose/tensor.hpp"

namespace modalcompose {

enum class Activation { tanh, relu };

Activation parse_activation(std::string_view token);
std::string_view to_string(Activation a) noexcept;

/// Fully connected network shape. The activation applies to hidden layers
/// only; the output layer is affine.
struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;

  void validate() const;
  std::size_t layer_count() const noexcept { return hidden_widths.size() + 1; }
  std::size_t param_count() const noexcept;

  // "in:h1,h2:out:act", used in checkpoint metadata.
  std::string encode() const;
  static MlpSpec decode(std::string_view text);

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// An MlpSpec bound to a name prefix inside some ParamSet. Layer l owns
/// `<prefix>l<l>.W` ([fan_in x fan_out]) and `<prefix>l<l>.b` ([fan_out]).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, MlpSpec spec);

  const MlpSpec& spec() const noexcept { return spec_; }
  const std::string& prefix() const noexcept { return prefix_; }

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init(ParamSet& params, Rng& rng) const;

  // input: [batch x input_dim]
  Var forward(Graph& graph, const ParamSet& params, Var input) const;
  Tensor forward(const ParamSet& params, const Tensor& input) const;

  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;

 private:
  std::string prefix_;
  MlpSpec spec_;
};

}  // namespace modalcompose
