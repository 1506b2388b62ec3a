#include "levrl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

LEVRL_NAMESPACE_BEGIN

namespace {

thread_local bool g_grad_enabled = true;

using Node = detail::Node;
using detail::Buffer;
using NodePtr = std::shared_ptr<Node>;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Mat>;
using MapM = Eigen::Map<Mat>;
using Vec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

void check_finite(const Buffer& values, const char* op) {
  for (Real v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void check_finite_input(const Tensor& t, const char* op) {
  for (Real v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite input to ") + op);
    }
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw InvalidArgument(std::string(op) + ": undefined tensor");
  }
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Row/column view used by the row-wise ops: rank-1 tensors are one row.
std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t) {
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  if (t.rank() == 1) return {1, t.shape()[0]};
  return {1, 1};
}

Tensor make_result(Shape shape, Buffer value, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs_grad =
      g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const NodePtr& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Softmax of row `in` scaled by 1/tau into `out`; returns log of the
// normalizer of the scaled, max-shifted row.
Real softmax_row(const Real* in, Real* out, std::size_t n, Real tau) {
  Real max_v = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < n; ++j) max_v = std::max(max_v, in[j] / tau);
  Real total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] / tau - max_v);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  return max_v + std::log(total);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), Real(0));
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape.size() > 2) {
    throw ShapeError("tensors are limited to rank 2, got " + shape_to_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value.assign(values.begin(), values.end());
  check_finite(node_->value, "tensor construction");
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::size() const { return defined() ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

std::span<const Real> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<Real> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return node_->value;
}

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  require_rank2(*this, "at");
  if (row >= node_->shape[0] || col >= node_->shape[1]) throw InvalidArgument("at(): index out of range");
  return node_->value[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<Real> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (size() != 1) {
    throw InvalidArgument("backward() needs a scalar, got shape " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      Real* g = parent->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
    const Real sign[2] = {1, -1};
    for (std::size_t p = 0; p < 2; ++p) {
      auto& parent = self.parents[p];
      if (!parent->requires_grad) continue;
      Real* g = parent->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign[p] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) {
      Real* g = a.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      Real* g = b.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * a.value[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  require_defined(a, "scale");
  Buffer out(a.values().begin(), a.values().end());
  for (Real& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), "scale", {a.node()}, [factor](Node& self) {
    Real* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  Buffer out(a.values().begin(), a.values().end());
  for (Real& v : out) v = v > 0 ? v : Real(0);
  return make_result(a.shape(), std::move(out), "relu", {a.node()}, [](Node& self) {
    Node& a = *self.parents[0];
    Real* g = a.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (a.value[i] > 0) g[i] += self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  require_defined(row, "add_row");
  if (row.rank() != 1 || row.shape()[0] != a.cols()) {
    throw ShapeError("add_row: row " + shape_to_string(row.shape()) + " does not fit " +
                     shape_to_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Buffer out(a.values().begin(), a.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return make_result(a.shape(), std::move(out), "add_row", {a.node(), row.node()},
                     [m, n](Node& self) {
                       Node& a = *self.parents[0];
                       Node& r = *self.parents[1];
                       if (a.requires_grad) {
                         Real* g = a.grad_data();
                         for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
                       }
                       if (r.requires_grad) {
                         Real* g = r.grad_data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                       }
                     });
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  Buffer out(m * n);
  MapM(out.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return make_result({m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    MapC g(self.grad.data(), m, n);
    if (a.requires_grad) {
      MapM(a.grad_data(), m, k).noalias() += g * MapC(b.value.data(), k, n).transpose();
    }
    if (b.requires_grad) {
      MapM(b.grad_data(), k, n).noalias() += MapC(a.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Buffer out(m * n);
  MapM(out.data(), n, m) = MapC(a.values().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), "transpose", {a.node()}, [m, n](Node& self) {
    MapM(self.parents[0]->grad_data(), m, n) += MapC(self.grad.data(), n, m).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  require_defined(bias, "linear");
  const std::size_t m = x.rows(), in = x.cols(), out_dim = weight.cols();
  if (weight.rows() != in || bias.rank() != 1 || bias.shape()[0] != out_dim) {
    throw ShapeError("linear: x " + shape_to_string(x.shape()) + ", weight " +
                     shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  Buffer out(m * out_dim);
  MapM y(out.data(), m, out_dim);
  y.noalias() = MapC(x.values().data(), m, in) * MapC(weight.values().data(), in, out_dim);
  y.rowwise() += Eigen::Map<const Vec>(bias.values().data(), out_dim);
  return make_result({m, out_dim}, std::move(out), "linear", {x.node(), weight.node(), bias.node()},
                     [m, in, out_dim](Node& self) {
                       Node& x = *self.parents[0];
                       Node& w = *self.parents[1];
                       Node& b = *self.parents[2];
                       MapC g(self.grad.data(), m, out_dim);
                       if (x.requires_grad) {
                         MapM(x.grad_data(), m, in).noalias() +=
                             g * MapC(w.value.data(), in, out_dim).transpose();
                       }
                       if (w.requires_grad) {
                         MapM(w.grad_data(), in, out_dim).noalias() +=
                             MapC(x.value.data(), m, in).transpose() * g;
                       }
                       if (b.requires_grad) {
                         Eigen::Map<Vec>(b.grad_data(), out_dim) += g.colwise().sum();
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.rank() != 1 || gain.shape()[0] != n || bias.rank() != 1 || bias.shape()[0] != n) {
    throw ShapeError("layer_norm: parameter shape does not match " + shape_to_string(x.shape()));
  }
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  Buffer out(m * n), normed(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = xv.data() + i * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= Real(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= Real(n);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = normed[i * n + j] * gv[j] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
      [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        Node& x = *self.parents[0];
        Node& gain = *self.parents[1];
        Node& bias = *self.parents[2];
        const Real* g = self.grad.data();
        if (gain.requires_grad) {
          Real* gg = gain.grad_data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * normed[i * n + j];
        }
        if (bias.requires_grad) {
          Real* gb = bias.grad_data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (x.requires_grad) {
          Real* gx = x.grad_data();
          Buffer dnormed(n);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dnormed[j] = g[i * n + j] * gain.value[j];
              mean_d += dnormed[j];
              mean_dx += dnormed[j] * normed[i * n + j];
            }
            mean_d /= Real(n);
            mean_dx /= Real(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] += inv_std[i] * (dnormed[j] - mean_d - normed[i * n + j] * mean_dx);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InvalidArgument("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  Buffer out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(tv.data() + rows[i] * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), "embedding", {table.node()},
                     [d, rows = std::move(rows)](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       for (std::size_t i = 0; i < rows.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
                     });
}

// ---------------------------------------------------------------- softmax family

Tensor softmax_tempered(const Tensor& logits, Real tau) {
  require_defined(logits, "softmax_tempered");
  if (!(tau > 0)) throw InvalidArgument("softmax_tempered: temperature must be positive");
  check_finite_input(logits, "softmax_tempered");
  const auto [m, n] = as_matrix(logits);
  if (n == 0) throw InvalidArgument("softmax_tempered: empty softmax axis");
  Buffer out(m * n);
  for (std::size_t i = 0; i < m; ++i) softmax_row(logits.values().data() + i * n, out.data() + i * n, n, tau);
  return make_result(logits.shape(), std::move(out), "softmax_tempered", {logits.node()},
                     [m, n, tau](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       const Real* p = self.value.data();
                       const Real* up = self.grad.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         Real dot = 0;
                         for (std::size_t j = 0; j < n; ++j) dot += up[i * n + j] * p[i * n + j];
                         for (std::size_t j = 0; j < n; ++j) {
                           g[i * n + j] += p[i * n + j] * (up[i * n + j] - dot) / tau;
                         }
                       }
                     });
}

Tensor log_softmax_tempered(const Tensor& logits, Real tau) {
  require_defined(logits, "log_softmax_tempered");
  if (!(tau > 0)) throw InvalidArgument("log_softmax_tempered: temperature must be positive");
  check_finite_input(logits, "log_softmax_tempered");
  const auto [m, n] = as_matrix(logits);
  if (n == 0) throw InvalidArgument("log_softmax_tempered: empty softmax axis");
  Buffer out(m * n), probs(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = logits.values().data() + i * n;
    const Real log_norm = softmax_row(row, probs.data() + i * n, n, tau);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] / tau - log_norm;
  }
  return make_result(logits.shape(), std::move(out), "log_softmax_tempered", {logits.node()},
                     [m, n, tau, probs = std::move(probs)](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       const Real* up = self.grad.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         Real total = 0;
                         for (std::size_t j = 0; j < n; ++j) total += up[i * n + j];
                         for (std::size_t j = 0; j < n; ++j) {
                           g[i * n + j] += (up[i * n + j] - probs[i * n + j] * total) / tau;
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, Reduction reduction) {
  require_rank2(logits, "cross_entropy");
  check_finite_input(logits, "cross_entropy");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  }
  Buffer probs(m * n);
  std::vector<int> kept(targets.begin(), targets.end());
  Real loss = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (kept[i] < 0) continue;
    if (static_cast<std::size_t>(kept[i]) >= n) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(kept[i]) + " out of " +
                            std::to_string(n) + " classes");
    }
    const Real* row = logits.values().data() + i * n;
    const Real log_norm = softmax_row(row, probs.data() + i * n, n, Real(1));
    loss -= row[kept[i]] - log_norm;
    ++counted;
  }
  const Real factor =
      reduction == Reduction::Mean ? (counted ? Real(1) / Real(counted) : Real(0)) : Real(1);
  return make_result({}, {loss * factor}, "cross_entropy", {logits.node()},
                     [n, factor, probs = std::move(probs), kept = std::move(kept)](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       const Real up = self.grad[0] * factor;
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         if (kept[i] < 0) continue;
                         for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up * probs[i * n + j];
                         g[i * n + static_cast<std::size_t>(kept[i])] -= up;
                       }
                     });
}

// ---------------------------------------------------------------- reductions / reshaping

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  Real total = 0;
  for (Real v : a.values()) total += v;
  return make_result({}, {total}, "sum", {a.node()}, [](Node& self) {
    Node& a = *self.parents[0];
    Real* g = a.grad_data();
    for (std::size_t i = 0; i < a.value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.size() == 0) throw InvalidArgument("mean of empty tensor");
  return scale(sum(a), Real(1) / Real(a.size()));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != m) {
    throw ShapeError("concat_cols: " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  Buffer out(m * (p + q));
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bv.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return make_result({m, p + q}, std::move(out), "concat_cols", {a.node(), b.node()},
                     [m, p, q](Node& self) {
                       Node& a = *self.parents[0];
                       Node& b = *self.parents[1];
                       if (a.requires_grad) {
                         Real* g = a.grad_data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < p; ++j) g[i * p + j] += self.grad[i * (p + q) + j];
                       }
                       if (b.requires_grad) {
                         Real* g = b.grad_data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < q; ++j) g[i * q + j] += self.grad[i * (p + q) + p + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_to_string(a.shape()));
  }
  const std::size_t n = a.cols();
  Buffer out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        a.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), "slice_rows", {a.node()},
                     [begin, n](Node& self) {
                       Real* g = self.parents[0]->grad_data() + begin * n;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank2(a, "gather_rows");
  const std::size_t n = a.cols();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  Buffer out(picked.size() * n);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (picked[i] >= a.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(a.values().data() + picked[i] * n, n, out.data() + i * n);
  }
  Shape out_shape{picked.size(), n};
  return make_result(std::move(out_shape), std::move(out), "gather_rows", {a.node()},
                     [n, picked = std::move(picked)](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       for (std::size_t i = 0; i < picked.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j) g[picked[i] * n + j] += self.grad[i * n + j];
                     });
}

Tensor select(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require_rank2(a, "select");
  if (rows.size() != cols.size()) throw ShapeError("select: row/column index count mismatch");
  const std::size_t n = a.cols();
  std::vector<std::size_t> flat(rows.size());
  Buffer out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows() || cols[i] >= n) throw ShapeError("select: index out of range");
    flat[i] = rows[i] * n + cols[i];
    out[i] = a.values()[flat[i]];
  }
  Shape out_shape{flat.size()};
  return make_result(std::move(out_shape), std::move(out), "select", {a.node()},
                     [flat = std::move(flat)](Node& self) {
                       Real* g = self.parents[0]->grad_data();
                       for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
                     });
}

// ---------------------------------------------------------------- attention

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            std::size_t heads) {
  require_rank2(query, "multi_head_attention");
  require_rank2(key, "multi_head_attention");
  require_rank2(value, "multi_head_attention");
  const std::size_t lq = query.rows(), lk = key.rows(), d = query.cols();
  if (key.cols() != d || value.cols() != d || value.rows() != lk) {
    throw ShapeError("multi_head_attention: q " + shape_to_string(query.shape()) + ", k " +
                     shape_to_string(key.shape()) + ", v " + shape_to_string(value.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw InvalidArgument("multi_head_attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
  }
  if (lk == 0) throw InvalidArgument("multi_head_attention: no keys");
  const std::size_t dh = d / heads;
  const Real inv_sqrt = Real(1) / std::sqrt(Real(dh));

  MapC q(query.values().data(), lq, d), k(key.values().data(), lk, d), v(value.values().data(), lk, d);
  Buffer out(lq * d);
  MapM o(out.data(), lq, d);
  // probs[h] is Lq x Lk
  std::vector<Mat> probs(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto cols = static_cast<Eigen::Index>(h * dh);
    const auto w = static_cast<Eigen::Index>(dh);
    Mat scores = (q.middleCols(cols, w) * k.middleCols(cols, w).transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const Real mx = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - mx).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    o.middleCols(cols, w).noalias() = scores * v.middleCols(cols, w);
    probs[h] = std::move(scores);
  }
  return make_result(
      {lq, d}, std::move(out), "multi_head_attention", {query.node(), key.node(), value.node()},
      [lq, lk, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node& self) {
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        MapC g(self.grad.data(), lq, d);
        MapC q(qn.value.data(), lq, d), k(kn.value.data(), lk, d), v(vn.value.data(), lk, d);
        for (std::size_t h = 0; h < heads; ++h) {
          const auto cols = static_cast<Eigen::Index>(h * dh);
          const auto w = static_cast<Eigen::Index>(dh);
          const Mat& p = probs[h];
          auto g_h = g.middleCols(cols, w);
          if (vn.requires_grad) {
            MapM(vn.grad_data(), lk, d).middleCols(cols, w).noalias() += p.transpose() * g_h;
          }
          if (!qn.requires_grad && !kn.requires_grad) continue;
          Mat dp = g_h * v.middleCols(cols, w).transpose();
          Mat ds(p.rows(), p.cols());
          for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const Real dot = (dp.row(i).array() * p.row(i).array()).sum();
            ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
          }
          ds *= inv_sqrt;
          if (qn.requires_grad) {
            MapM(qn.grad_data(), lq, d).middleCols(cols, w).noalias() += ds * k.middleCols(cols, w);
          }
          if (kn.requires_grad) {
            MapM(kn.grad_data(), lk, d).middleCols(cols, w).noalias() += ds.transpose() * q.middleCols(cols, w);
          }
        }
      });
}

LEVRL_NAMESPACE_END
