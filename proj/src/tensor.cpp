#include "modalcompose/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <utility>

#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void check_dims(const std::vector<std::size_t>& dims) {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(dims));
  }
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? " x " : "") << dims[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(product(dims_), fill);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (product(dims_) != data_.size()) {
    throw ShapeError("tensor " + shape_string(dims_) + " cannot hold " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::rows() const {
  if (dims_.size() == 1) return 1;
  if (dims_.size() != 2) throw ShapeError("expected a matrix, got " + shape_string(dims_));
  return dims_[0];
}

std::size_t Tensor::cols() const {
  if (dims_.size() == 1) return dims_[0];
  if (dims_.size() != 2) throw ShapeError("expected a matrix, got " + shape_string(dims_));
  return dims_[1];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

void ParamSet::add(const std::string& name, Tensor value) {
  if (values_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  grads_.emplace(name, Tensor(value.dims(), 0.0));
  values_.emplace(name, std::move(value));
}

const Tensor& ParamSet::value(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::value(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).value(name));
}

const Tensor& ParamSet::grad(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::grad(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).grad(name)); }

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [name, _] : values_) out.push_back(name);
  return out;
}

std::size_t ParamSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

void ParamSet::zero_grad() noexcept {
  for (auto& [_, g] : grads_) g.fill(0.0);
}

void ParamSet::merge(const std::string& prefix, const ParamSet& other) {
  for (const auto& [name, t] : other.values_) add(prefix + name, t);
}

ParamSet ParamSet::extract(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [name, t] : values_) {
    if (name.starts_with(prefix)) out.add(name.substr(prefix.size()), t);
  }
  return out;
}

std::uint64_t ParamSet::checksum() const noexcept {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : values_) {
    fnv(h, name.data(), name.size());
    for (auto d : t.dims()) {
      const auto d64 = static_cast<std::uint64_t>(d);
      fnv(h, &d64, sizeof d64);
    }
    fnv(h, t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace modalcompose
