#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace modalcompose {

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Rank-2 accessors. A rank-1 tensor reads as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<const double> row_span(std::size_t r) const { return data().subspan(r * cols(), cols()); }
  std::span<double> row_span(std::size_t r) { return data().subspan(r * cols(), cols()); }

  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }
  bool all_finite() const noexcept;
  void fill(double value) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& dims);

/// Named trainable parameters with a gradient slot of identical shape for each.
/// Iteration order is the lexical order of names.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.contains(name); }

  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  Tensor& grad(const std::string& name);

  std::vector<std::string> names() const;
  std::size_t tensor_count() const noexcept { return values_.size(); }
  std::size_t scalar_count() const noexcept;
  void zero_grad() noexcept;

  // Copies every entry of `other` under `prefix + name`.
  void merge(const std::string& prefix, const ParamSet& other);
  // Entries whose name starts with `prefix`, with the prefix stripped.
  ParamSet extract(const std::string& prefix) const;

  // FNV-1a over names, dims and raw value bytes.
  std::uint64_t checksum() const noexcept;

  const std::map<std::string, Tensor>& entries() const noexcept { return values_; }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.values_ == b.values_; }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> grads_;
};

}  // namespace modalcompose
