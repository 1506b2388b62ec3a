#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "levrl/common.hpp"

LEVRL_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// Storage is 64-byte aligned so vectorized reductions split the same way
// regardless of where the allocator puts a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad();
  Real* grad_data() {
    ensure_grad();
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major tensor of rank 0, 1 or 2 with reverse-mode autodiff.
///
/// Tensor is a shared handle: copies alias the same storage and graph node.
/// Ops record their inputs when gradient recording is enabled and at least
/// one input requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Leading dimension of a rank-2 tensor.
  std::size_t rows() const;
  /// Trailing dimension of a rank-2 tensor.
  std::size_t cols() const;

  std::span<const Real> values() const;
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient, then releases the recorded graph. `this` must hold one value.
  void backward() const;

  /// Same storage, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether ops currently record the graph (thread-local, default on).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor relu(const Tensor& a);

/// a[m x n] + row[n], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[m x in] * weight[in x out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-5));

/// Rows of `table` selected by `ids`: [ids.size() x table.cols()].
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

/// Row-wise exp(y / tau) / sum exp(y / tau), max-subtracted.
Tensor softmax_tempered(const Tensor& logits, Real tau);
Tensor log_softmax_tempered(const Tensor& logits, Real tau);

enum class Reduction { Sum, Mean };

/// Row-wise cross-entropy of logits[m x C] against class targets. Negative
/// targets are ignored and never contribute to the value or the gradient.
/// With Mean and no counted rows the result is zero.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     Reduction reduction = Reduction::Mean);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

/// Picks a[rows[i], cols[i]] into a vector of length rows.size().
Tensor select(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);

/// Scaled dot-product attention split over `heads` column blocks.
/// query[Lq x d], key/value[Lk x d] -> [Lq x d]. No masking.
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            std::size_t heads);

LEVRL_NAMESPACE_END
