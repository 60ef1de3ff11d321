#include "modalcompose/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.dims()) + " vs " +
                     shape_string(b.dims()));
  }
}

// C += A * B for row-major A [m x k], B [k x n], C [m x n].
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.ref ? *n.ref : n.value;
}

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, const char* op,
                std::function<void(Graph&, std::size_t)> back) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in graph constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::param(const ParamSet& set, const std::string& name) {
  const auto key = std::make_pair(&set, name);
  if (auto it = param_ids_.find(key); it != param_ids_.end()) return Var{it->second};
  const Tensor& t = set.value(name);
  if (!t.all_finite()) throw NumericError("parameter '" + name + "' holds a non-finite value");
  Node n;
  n.ref = &t;
  n.owner = &set;
  n.name = name;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(key, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.dims()) + " * " + shape_string(bv.dims()));
  }
  Tensor out({m, n}, 0.0);
  gemm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return push(std::move(out), {a.id, b.id}, "matmul", [a, b, m, k, n](Graph& g, std::size_t self) {
    const Tensor& dc = g.grad(self);
    if (g.needs_grad(a.id)) {
      const Tensor& bv = g.value(b);
      Tensor& da = g.grad(a.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * bv[p * n + j];
          da[i * k + p] += acc;
        }
      }
    }
    if (g.needs_grad(b.id)) {
      const Tensor& av = g.value(a);
      Tensor& db = g.grad(b.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * dc[i * n + j];
        }
      }
    }
  });
}

Var Graph::add_row(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bv.size() != n || bv.rows() != 1) {
    throw ShapeError("add_row: bias " + shape_string(bv.dims()) + " does not match " + shape_string(xv.dims()));
  }
  Tensor out({m, n}, std::vector<double>(xv.data().begin(), xv.data().end()));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return push(std::move(out), {x.id, bias.id}, "add_row", [x, bias, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.needs_grad(x.id)) {
      Tensor& dx = g.grad(x.id);
      for (std::size_t i = 0; i < m * n; ++i) dx[i] += d[i];
    }
    if (g.needs_grad(bias.id)) {
      Tensor& db = g.grad(bias.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) db[j] += d[i * n + j];
      }
    }
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "add");
  Tensor out(av.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return push(std::move(out), {a.id, b.id}, "add", [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    for (Var v : {a, b}) {
      if (!g.needs_grad(v.id)) continue;
      Tensor& dv = g.grad(v.id);
      for (std::size_t i = 0; i < d.size(); ++i) dv[i] += d[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "sub");
  Tensor out(av.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return push(std::move(out), {a.id, b.id}, "sub", [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.needs_grad(a.id)) {
      Tensor& da = g.grad(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
    }
    if (g.needs_grad(b.id)) {
      Tensor& db = g.grad(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] -= d[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return push(std::move(out), {a.id, b.id}, "mul", [a, b](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.needs_grad(a.id)) {
      const Tensor& bv = g.value(b);
      Tensor& da = g.grad(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bv[i];
    }
    if (g.needs_grad(b.id)) {
      const Tensor& av = g.value(a);
      Tensor& db = g.grad(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * av[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  const Tensor& av = value(a);
  Tensor out(av.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return push(std::move(out), {a.id}, "scale", [a, s](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    Tensor& da = g.grad(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * s;
  });
}

Var Graph::tanh(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return push(std::move(out), {x.id}, "tanh", [x](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& y = g.nodes_[self].value;
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var Graph::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.dims(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return push(std::move(out), {x.id}, "relu", [x](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& xv = g.value(x);
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += d[i];
    }
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (t.rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(t.cols());
    ids.push_back(p.id);
    total += t.cols();
  }
  Tensor out({m, total}, 0.0);
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& t = value(parts[q]);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(t.data().data() + i * widths[q], widths[q], out.data().data() + i * total + offset);
    }
    offset += widths[q];
  }
  return push(std::move(out), ids, "concat_cols", [ids, widths, m, total](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (g.needs_grad(ids[q])) {
        Tensor& dp = g.grad(ids[q]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < widths[q]; ++j) dp[i * widths[q] + j] += d[i * total + offset + j];
        }
      }
      offset += widths[q];
    }
  });
}

Var Graph::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || begin + count > n) throw ShapeError("slice_cols: range out of bounds");
  Tensor out({m, count}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xv.data().data() + i * n + begin, count, out.data().data() + i * count);
  }
  return push(std::move(out), {x.id}, "slice_cols", [x, begin, count, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < count; ++j) dx[i * n + begin + j] += d[i * count + j];
    }
  });
}

Var Graph::mul_col(Var x, Var s) {
  const Tensor& xv = value(x);
  const Tensor& sv = value(s);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (sv.rows() != m || sv.cols() != 1) {
    throw ShapeError("mul_col: scale " + shape_string(sv.dims()) + " does not match " + shape_string(xv.dims()));
  }
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  }
  return push(std::move(out), {x.id, s.id}, "mul_col", [x, s, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.needs_grad(x.id)) {
      const Tensor& sv = g.value(s);
      Tensor& dx = g.grad(x.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += d[i * n + j] * sv[i];
      }
    }
    if (g.needs_grad(s.id)) {
      const Tensor& xv = g.value(x);
      Tensor& ds = g.grad(s.id);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += d[i * n + j] * xv[i * n + j];
        ds[i] += acc;
      }
    }
  });
}

Var Graph::softmax_rows(Var x) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = xv.row_span(i);
    const double hi = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - hi);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return push(std::move(out), {x.id}, "softmax_rows", [x, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& y = g.nodes_[self].value;
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += d[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += y[i * n + j] * (d[i * n + j] - dot);
    }
  });
}

Var Graph::sum(Var x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return push(Tensor::scalar(acc), {x.id}, "sum", [x](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

Var Graph::mean(Var x) {
  const Tensor& xv = value(x);
  const double inv = 1.0 / static_cast<double>(xv.size());
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return push(Tensor::scalar(acc * inv), {x.id}, "mean", [x, inv](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0] * inv;
    Tensor& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

Var Graph::mean_sq_row_norm(Var pred, Var target) {
  const Tensor& pv = value(pred);
  const Tensor& tv = value(target);
  require_same_shape(pv, tv, "mean_sq_row_norm");
  const double inv_rows = 1.0 / static_cast<double>(pv.rows());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double r = pv[i] - tv[i];
    acc += r * r;
  }
  return push(Tensor::scalar(acc * inv_rows), {pred.id, target.id}, "mean_sq_row_norm",
              [pred, target, inv_rows](Graph& g, std::size_t self) {
                const double d = g.grad(self)[0] * 2.0 * inv_rows;
                const Tensor& pv = g.value(pred);
                const Tensor& tv = g.value(target);
                if (g.needs_grad(pred.id)) {
                  Tensor& dp = g.grad(pred.id);
                  for (std::size_t i = 0; i < pv.size(); ++i) dp[i] += d * (pv[i] - tv[i]);
                }
                if (g.needs_grad(target.id)) {
                  Tensor& dt = g.grad(target.id);
                  for (std::size_t i = 0; i < pv.size(); ++i) dt[i] -= d * (pv[i] - tv[i]);
                }
              });
}

void Graph::backward(Var loss, std::span<ParamSet* const> targets) {
  if (!record_) throw ContractError("backward on a graph built without gradient recording");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ContractError("backward requires a scalar loss, got " + shape_string(lv.dims()));

  grads_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].requires_grad) grads_[i] = Tensor(value(Var{i}).dims(), 0.0);
  }
  if (nodes_[loss.id].requires_grad) grads_[loss.id][0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this, i);
  }

  for (ParamSet* target : targets) {
    target->zero_grad();
    for (std::size_t i = 0; i <= loss.id; ++i) {
      const Node& n = nodes_[i];
      if (n.owner != target || !n.requires_grad) continue;
      if (!grads_[i].all_finite()) throw NumericError("non-finite gradient for parameter '" + n.name + "'");
      target->grad(n.name) = grads_[i];
    }
  }
}

void Graph::backward(Var loss, ParamSet& target) {
  ParamSet* targets[] = {&target};
  backward(loss, targets);
}

}  // namespace modalcompose
