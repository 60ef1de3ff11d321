#include "modalcompose/optim.hpp"

#include <cmath>

#include "modalcompose/errors.hpp"

namespace modalcompose {

void Adam::step(ParamSet& params) {
  for (const auto& name : params.names()) {
    if (!params.grad(name).all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const auto& name : params.names()) {
    Tensor& w = params.value(name);
    const Tensor& g = params.grad(name);
    auto [mit, _m] = m_.try_emplace(name, w.dims(), 0.0);
    auto [vit, _v] = v_.try_emplace(name, w.dims(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(w)) throw ShapeError("optimizer moment shape differs for '" + name + "'");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

std::map<std::string, Tensor> finite_diff_grad(const std::function<double(const ParamSet&)>& loss_fn,
                                               ParamSet& params, double h) {
  if (!(h > 0.0)) throw ContractError("finite-difference step must be positive");
  std::map<std::string, Tensor> out;
  for (const auto& name : params.names()) {
    Tensor& w = params.value(name);
    Tensor g(w.dims(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss_fn(params);
      w[i] = saved - h;
      const double down = loss_fn(params);
      w[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

}  // namespace modalcompose
