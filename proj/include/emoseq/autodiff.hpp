#pragma once

// Reverse-mode differentiation over Tensor values. Every op returns a Var;
// when any operand requires a gradient the op is appended to that operand's
// Tape together with a closure that pushes the output gradient back into
// its operands. Ops on constants record nothing, so inference runs the same
// code without building a graph.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emoseq/errors.hpp"
#include "emoseq/random.hpp"
#include "emoseq/tensor.hpp"

namespace emoseq {

template <std::floating_point T>
class Tape;

namespace detail {

template <std::floating_point T>
struct Node {
  Tensor<T> value;
  const Tensor<T>* ref = nullptr;  // parameter leaves read their value here
  Tensor<T> grad;
  Tensor<T>* grad_sink = nullptr;  // parameter leaves accumulate here
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  const char* op = "leaf";
  std::function<void()> backward;

  const Tensor<T>& val() const { return ref ? *ref : value; }

  Tensor<T>& grad_buffer() {
    Tensor<T>& g = grad_sink ? *grad_sink : grad;
    if (g.empty()) g = Tensor<T>(val().shape());
    return g;
  }
};

}  // namespace detail

/// Handle to a value in the computation. Copies share the same node.
template <std::floating_point T>
class Var {
 public:
  using Node = detail::Node<T>;

  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  /// Non-owning constant; `value` must outlive every op that reads it.
  static Var view(const Tensor<T>& value) {
    auto node = std::make_shared<Node>();
    node->ref = &value;
    return Var(std::move(node));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->val(); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  const Tensor<T>& grad() const {
    const Tensor<T>& g = node_->grad_sink ? *node_->grad_sink : node_->grad;
    if (g.empty()) throw ContractError("no gradient has reached this value");
    return g;
  }

  Node* node() const noexcept { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed differentiable ops, confined to one thread.
template <std::floating_point T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is kept on the leaf itself.
  Var<T> variable(Tensor<T> value) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->tape = this;
    return Var<T>(std::move(node));
  }

  /// Leaf reading `value` in place and accumulating into `grad`.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>& grad) {
    auto node = std::make_shared<detail::Node<T>>();
    node->ref = &value;
    node->grad_sink = &grad;
    node->requires_grad = true;
    node->tape = this;
    return Var<T>(std::move(node));
  }

  void backward(const Var<T>& loss) {
    backward(loss, [](std::size_t, std::string_view) {});
  }

  /// Runs every recorded op's gradient rule in reverse execution order;
  /// `visit(index, op)` observes each op exactly once.
  template <class Visit>
  void backward(const Var<T>& loss, Visit&& visit) {
    if (!loss.defined() || loss.value().numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad() || loss.node()->tape != this) {
      throw ContractError("loss was not produced on this tape");
    }
    accumulate(loss.node()->grad_buffer(), Tensor<T>(loss.shape(), T(1)));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& node = *nodes_[i];
      visit(i, std::string_view(node.op));
      if (!node.grad.empty() && node.backward) node.backward();
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  std::vector<std::string_view> ops() const {
    std::vector<std::string_view> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.emplace_back(n->op);
    return out;
  }

  void clear() { nodes_.clear(); }

  void push(std::shared_ptr<detail::Node<T>> node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
};

namespace detail {

template <std::floating_point T>
Tape<T>* common_tape(std::span<const Var<T>* const> inputs) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : inputs) {
    if (!v->requires_grad()) continue;
    if (tape && tape != v->node()->tape) throw ContractError("operands recorded on different tapes");
    tape = v->node()->tape;
  }
  return tape;
}

template <std::floating_point T, class MakeBackward>
Var<T> make_op(const char* name, Tensor<T> value, std::span<const Var<T>* const> inputs,
               MakeBackward&& make_backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = name;
  if (Tape<T>* tape = common_tape<T>(inputs)) {
    node->requires_grad = true;
    node->tape = tape;
    node->backward = make_backward(node.get());
    tape->push(node);
  }
  return Var<T>(std::move(node));
}

template <std::floating_point T, class MakeBackward>
Var<T> make_op(const char* name, Tensor<T> value, std::initializer_list<const Var<T>*> inputs,
               MakeBackward&& make_backward) {
  return make_op<T>(name, std::move(value), std::span<const Var<T>* const>(inputs.begin(), inputs.size()),
                    std::forward<MakeBackward>(make_backward));
}

// c_row = a_row · B, with B stored k×n. The accumulation order (k ascending
// from zero) is shared by every product in the library, so algebraically
// neutral extra terms leave results bitwise unchanged.
template <std::floating_point T>
inline void row_times_matrix(const T* a_row, std::size_t k, const T* b, std::size_t n, T* c_row) {
  std::fill(c_row, c_row + n, T(0));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T a = a_row[kk];
    const T* b_row = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
  }
}

// da_row += dc_row · Bᵀ
template <std::floating_point T>
inline void row_times_transpose_acc(const T* dc_row, const T* b, std::size_t k, std::size_t n,
                                    T* da_row) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* b_row = b + kk * n;
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += dc_row[j] * b_row[j];
    da_row[kk] += acc;
  }
}

// dB += a_rowᵀ · dc_row
template <std::floating_point T>
inline void outer_acc(const T* a_row, std::size_t k, const T* dc_row, std::size_t n, T* db) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T a = a_row[kk];
    if (a == T(0)) continue;
    T* db_row = db + kk * n;
    for (std::size_t j = 0; j < n; ++j) db_row[j] += a * dc_row[j];
  }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <std::floating_point T, class F, class DF>
Var<T> unary(const char* name, const Var<T>& a, F f, DF df_from_y) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  return make_op<T>(name, std::move(out), {&a}, [a, df_from_y](Node<T>* self) {
    return [a, df_from_y, self] {
      auto& ga = a.node()->grad_buffer();
      const auto& g = self->grad;
      const auto& y = self->value;
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * df_from_y(y[i]);
    };
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m×k] · b[k×n]
template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(A.shape()) + " by " + to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> C({m, n});
  for (std::size_t i = 0; i < m; ++i) detail::row_times_matrix(A.raw() + i * k, k, B.raw(), n, C.raw() + i * n);
  return detail::make_op<T>("matmul", std::move(C), {&a, &b}, [a, b, m, k, n](detail::Node<T>* self) {
    return [a, b, m, k, n, self] {
      const T* g = self->grad.raw();
      const auto& A = a.value();
      const auto& B = b.value();
      if (a.requires_grad()) {
        T* ga = a.node()->grad_buffer().raw();
        for (std::size_t i = 0; i < m; ++i) detail::row_times_transpose_acc(g + i * n, B.raw(), k, n, ga + i * k);
      }
      if (b.requires_grad()) {
        T* gb = b.node()->grad_buffer().raw();
        for (std::size_t i = 0; i < m; ++i) detail::outer_acc(A.raw() + i * k, k, g + i * n, n, gb);
      }
    };
  });
}

/// Row r of x[N×K] multiplied by the matrix w[groups[r]] of w[S×K×M].
template <std::floating_point T>
Var<T> grouped_matmul(const Var<T>& x, const Var<T>& w, std::vector<std::size_t> groups) {
  const auto& X = x.value();
  const auto& W = w.value();
  if (X.rank() != 2 || W.rank() != 3 || X.dim(1) != W.dim(1)) {
    throw DimensionError("grouped_matmul: cannot multiply " + to_string(X.shape()) + " by " +
                         to_string(W.shape()));
  }
  const std::size_t rows = X.dim(0), k = X.dim(1), n = W.dim(2), s = W.dim(0);
  if (groups.size() != rows) throw DimensionError("grouped_matmul: one group index per row required");
  for (auto g : groups) {
    if (g >= s) throw ContractError("grouped_matmul: group index out of range");
  }
  Tensor<T> Y({rows, n});
  for (std::size_t r = 0; r < rows; ++r) {
    detail::row_times_matrix(X.raw() + r * k, k, W.raw() + groups[r] * k * n, n, Y.raw() + r * n);
  }
  return detail::make_op<T>("grouped_matmul", std::move(Y), {&x, &w},
                            [x, w, groups = std::move(groups), k, n](detail::Node<T>* self) {
    return [x, w, groups, k, n, self] {
      const T* g = self->grad.raw();
      const auto& X = x.value();
      const auto& W = w.value();
      for (std::size_t r = 0; r < groups.size(); ++r) {
        const std::size_t off = groups[r] * k * n;
        if (x.requires_grad()) {
          detail::row_times_transpose_acc(g + r * n, W.raw() + off, k, n, x.node()->grad_buffer().raw() + r * k);
        }
        if (w.requires_grad()) {
          detail::outer_acc(X.raw() + r * k, k, g + r * n, n, w.node()->grad_buffer().raw() + off);
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return detail::make_op<T>("add", std::move(out), {&a, &b}, [a, b](detail::Node<T>* self) {
    return [a, b, self] {
      if (a.requires_grad()) accumulate(a.node()->grad_buffer(), self->grad);
      if (b.requires_grad()) accumulate(b.node()->grad_buffer(), self->grad);
    };
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return detail::make_op<T>("sub", std::move(out), {&a, &b}, [a, b](detail::Node<T>* self) {
    return [a, b, self] {
      if (a.requires_grad()) accumulate(a.node()->grad_buffer(), self->grad);
      if (b.requires_grad()) {
        auto& gb = b.node()->grad_buffer();
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= self->grad[i];
      }
    };
  });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op<T>("mul", std::move(out), {&a, &b}, [a, b](detail::Node<T>* self) {
    return [a, b, self] {
      const auto& g = self->grad;
      if (a.requires_grad()) {
        auto& ga = a.node()->grad_buffer();
        const auto& bv = b.value();
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->grad_buffer();
        const auto& av = a.value();
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
      }
    };
  });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return detail::make_op<T>("scale", std::move(out), {&a}, [a, factor](detail::Node<T>* self) {
    return [a, factor, self] {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += factor * self->grad[i];
    };
  });
}

/// a[m×n] + bias broadcast over rows; bias is [n] or [1×n].
template <std::floating_point T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
  const auto& A = a.value();
  const auto& B = bias.value();
  if (A.rank() != 2 || B.numel() != A.dim(1) || B.rank() > 2 || (B.rank() == 2 && B.dim(0) != 1)) {
    throw DimensionError("add_row: cannot broadcast " + to_string(B.shape()) + " over " + to_string(A.shape()));
  }
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  return detail::make_op<T>("add_row", std::move(out), {&a, &bias}, [a, bias, m, n](detail::Node<T>* self) {
    return [a, bias, m, n, self] {
      if (a.requires_grad()) accumulate(a.node()->grad_buffer(), self->grad);
      if (bias.requires_grad()) {
        auto& gb = bias.node()->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += self->grad[i * n + j];
      }
    };
  });
}

template <std::floating_point T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T y) { return T(1) - y * y; });
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        // branch keeps exp() from overflowing for large |x|
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Structural

namespace detail {
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}
}  // namespace detail

/// Joins operands along `axis`, preserving operand order.
template <std::floating_point T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: incompatible shapes " + to_string(first) + " and " + to_string(s));
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  const std::size_t out_row = split.extent * split.inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * split.inner;
    const T* src = p.value().raw();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.raw() + o * out_row + offset);
    offset += chunk;
  }
  std::vector<const Var<T>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  std::vector<Var<T>> held(parts.begin(), parts.end());
  return detail::make_op<T>("concat", std::move(out), std::span<const Var<T>* const>(inputs),
                            [held = std::move(held), axis, split, out_row](detail::Node<T>* self) {
    return [held, axis, split, out_row, self] {
      std::size_t offset = 0;
      for (const auto& p : held) {
        const std::size_t chunk = p.shape()[axis] * split.inner;
        if (p.requires_grad()) {
          T* g = p.node()->grad_buffer().raw();
          for (std::size_t o = 0; o < split.outer; ++o) {
            const T* src = self->grad.raw() + o * out_row + offset;
            for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
          }
        }
        offset += chunk;
      }
    };
  });
}

template <std::floating_point T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat<T>(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}

/// Elements [begin, end) along `axis`.
template <std::floating_point T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + to_string(s));
  }
  const auto split = detail::split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t in_row = split.extent * split.inner;
  const std::size_t chunk = (end - begin) * split.inner;
  const T* src = a.value().raw();
  for (std::size_t o = 0; o < split.outer; ++o) {
    const T* from = src + o * in_row + begin * split.inner;
    std::copy(from, from + chunk, out.raw() + o * chunk);
  }
  return detail::make_op<T>("slice", std::move(out), {&a}, [a, split, in_row, chunk, begin](detail::Node<T>* self) {
    return [a, split, in_row, chunk, begin, self] {
      T* g = a.node()->grad_buffer().raw();
      for (std::size_t o = 0; o < split.outer; ++o) {
        T* to = g + o * in_row + begin * split.inner;
        const T* from = self->grad.raw() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) to[i] += from[i];
      }
    };
  });
}

template <std::floating_point T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return detail::make_op<T>("reshape", std::move(out), {&a}, [a](detail::Node<T>* self) {
    return [a, self] {
      auto& g = a.node()->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self->grad[i];
    };
  });
}

/// Rows `ids` of a 2-D table (embedding lookup).
template <std::floating_point T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::size_t> ids) {
  const auto& W = table.value();
  detail::require_rank(W.shape(), 2, "gather_rows");
  if (ids.empty()) throw ContractError("gather_rows: no row indices");
  const std::size_t rows = W.dim(0), d = W.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) throw ContractError("gather_rows: index " + std::to_string(ids[r]) + " out of range");
    std::copy(W.raw() + ids[r] * d, W.raw() + (ids[r] + 1) * d, out.raw() + r * d);
  }
  return detail::make_op<T>("gather_rows", std::move(out), {&table}, [table, ids = std::move(ids), d](detail::Node<T>* self) {
    return [table, ids, d, self] {
      T* g = table.node()->grad_buffer().raw();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const T* from = self->grad.raw() + r * d;
        T* to = g + ids[r] * d;
        for (std::size_t j = 0; j < d; ++j) to[j] += from[j];
      }
    };
  });
}

/// Row-wise select: row r comes from `a` where take_a[r], else from `b`.
template <std::floating_point T>
Var<T> where_rows(const std::vector<std::uint8_t>& take_a, const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "where_rows");
  detail::require_rank(a.shape(), 2, "where_rows");
  const std::size_t rows = a.dim(0), n = a.dim(1);
  if (take_a.size() != rows) throw DimensionError("where_rows: one selector per row required");
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = (take_a[r] ? a : b).value().raw() + r * n;
    std::copy(src, src + n, out.raw() + r * n);
  }
  return detail::make_op<T>("where_rows", std::move(out), {&a, &b}, [take_a, a, b, n](detail::Node<T>* self) {
    return [take_a, a, b, n, self] {
      for (std::size_t r = 0; r < take_a.size(); ++r) {
        const Var<T>& dst = take_a[r] ? a : b;
        if (!dst.requires_grad()) continue;
        T* g = dst.node()->grad_buffer().raw() + r * n;
        const T* from = self->grad.raw() + r * n;
        for (std::size_t j = 0; j < n; ++j) g[j] += from[j];
      }
    };
  });
}

/// m tensors of shape [B×D] → [B×m×D].
template <std::floating_point T>
Var<T> stack_steps(std::span<const Var<T>> steps) {
  if (steps.empty()) throw ContractError("stack_steps: no steps");
  const Shape& s0 = steps[0].shape();
  detail::require_rank(s0, 2, "stack_steps");
  for (const auto& s : steps) detail::require_same(s.shape(), s0, "stack_steps");
  const std::size_t B = s0[0], D = s0[1], m = steps.size();
  Tensor<T> out({B, m, D});
  for (std::size_t j = 0; j < m; ++j) {
    const T* src = steps[j].value().raw();
    for (std::size_t b = 0; b < B; ++b) std::copy(src + b * D, src + (b + 1) * D, out.raw() + (b * m + j) * D);
  }
  std::vector<const Var<T>*> inputs;
  for (const auto& s : steps) inputs.push_back(&s);
  std::vector<Var<T>> held(steps.begin(), steps.end());
  return detail::make_op<T>("stack_steps", std::move(out), std::span<const Var<T>* const>(inputs),
                            [held = std::move(held), B, D, m](detail::Node<T>* self) {
    return [held, B, D, m, self] {
      for (std::size_t j = 0; j < m; ++j) {
        if (!held[j].requires_grad()) continue;
        T* g = held[j].node()->grad_buffer().raw();
        for (std::size_t b = 0; b < B; ++b) {
          const T* from = self->grad.raw() + (b * m + j) * D;
          for (std::size_t d = 0; d < D; ++d) g[b * D + d] += from[d];
        }
      }
    };
  });
}

/// out[b, j] = ⟨keys[b, j, :], query[b, :]⟩ for keys [B×m×D], query [B×D].
template <std::floating_point T>
Var<T> batched_dot(const Var<T>& keys, const Var<T>& query) {
  const Shape& ks = keys.shape();
  const Shape& qs = query.shape();
  if (ks.size() != 3 || qs.size() != 2 || ks[0] != qs[0] || ks[2] != qs[1]) {
    throw DimensionError("batched_dot: incompatible " + to_string(ks) + " and " + to_string(qs));
  }
  const std::size_t B = ks[0], m = ks[1], D = ks[2];
  Tensor<T> out({B, m});
  const T* K = keys.value().raw();
  const T* Q = query.value().raw();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      const T* k = K + (b * m + j) * D;
      for (std::size_t d = 0; d < D; ++d) acc += k[d] * Q[b * D + d];
      out[b * m + j] = acc;
    }
  return detail::make_op<T>("batched_dot", std::move(out), {&keys, &query}, [keys, query, B, m, D](detail::Node<T>* self) {
    return [keys, query, B, m, D, self] {
      const T* g = self->grad.raw();
      const T* K = keys.value().raw();
      const T* Q = query.value().raw();
      T* gk = keys.requires_grad() ? keys.node()->grad_buffer().raw() : nullptr;
      T* gq = query.requires_grad() ? query.node()->grad_buffer().raw() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < m; ++j) {
          const T gj = g[b * m + j];
          const std::size_t off = (b * m + j) * D;
          for (std::size_t d = 0; d < D; ++d) {
            if (gk) gk[off + d] += gj * Q[b * D + d];
            if (gq) gq[b * D + d] += gj * K[off + d];
          }
        }
    };
  });
}

/// out[b, :] = Σ_j weights[b, j] · values[b, j, :] for weights [B×m], values [B×m×D].
template <std::floating_point T>
Var<T> weighted_sum(const Var<T>& weights, const Var<T>& values) {
  const Shape& ws = weights.shape();
  const Shape& vs = values.shape();
  if (ws.size() != 2 || vs.size() != 3 || ws[0] != vs[0] || ws[1] != vs[1]) {
    throw DimensionError("weighted_sum: incompatible " + to_string(ws) + " and " + to_string(vs));
  }
  const std::size_t B = vs[0], m = vs[1], D = vs[2];
  Tensor<T> out({B, D});
  const T* W = weights.value().raw();
  const T* V = values.value().raw();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) {
      const T w = W[b * m + j];
      const T* v = V + (b * m + j) * D;
      for (std::size_t d = 0; d < D; ++d) out[b * D + d] += w * v[d];
    }
  return detail::make_op<T>("weighted_sum", std::move(out), {&weights, &values}, [weights, values, B, m, D](detail::Node<T>* self) {
    return [weights, values, B, m, D, self] {
      const T* g = self->grad.raw();
      const T* W = weights.value().raw();
      const T* V = values.value().raw();
      T* gw = weights.requires_grad() ? weights.node()->grad_buffer().raw() : nullptr;
      T* gv = values.requires_grad() ? values.node()->grad_buffer().raw() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t off = (b * m + j) * D;
          T acc = 0;
          for (std::size_t d = 0; d < D; ++d) {
            acc += g[b * D + d] * V[off + d];
            if (gv) gv[off + d] += W[b * m + j] * g[b * D + d];
          }
          if (gw) gw[b * m + j] += acc;
        }
    };
  });
}

// ---------------------------------------------------------------------------
// Normalization, reductions, losses

namespace detail {
template <std::floating_point T>
Var<T> softmax_impl(const Var<T>& a, std::size_t axis, const std::vector<std::uint8_t>* mask) {
  const auto& X = a.value();
  if (axis >= X.rank()) throw DimensionError("softmax: axis out of range for " + to_string(X.shape()));
  for (T v : X.data()) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  const auto split = split_axis(X.shape(), axis);
  Tensor<T> Y(X.shape());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t in = 0; in < split.inner; ++in) {
      auto idx = [&](std::size_t k) { return (o * split.extent + k) * split.inner + in; };
      auto keep = [&](std::size_t k) { return !mask || (*mask)[idx(k)]; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < split.extent; ++k)
        if (keep(k)) mx = std::max(mx, X[idx(k)]);
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw ContractError("softmax: every position along the axis is masked");
      }
      T total = 0;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const T e = keep(k) ? std::exp(X[idx(k)] - mx) : T(0);
        Y[idx(k)] = e;
        total += e;
      }
      for (std::size_t k = 0; k < split.extent; ++k) Y[idx(k)] /= total;
    }
  return make_op<T>(mask ? "masked_softmax" : "softmax", std::move(Y), {&a}, [a, split](Node<T>* self) {
    return [a, split, self] {
      auto& ga = a.node()->grad_buffer();
      const auto& y = self->value;
      const auto& g = self->grad;
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t in = 0; in < split.inner; ++in) {
          auto idx = [&](std::size_t k) { return (o * split.extent + k) * split.inner + in; };
          T dot = 0;
          for (std::size_t k = 0; k < split.extent; ++k) dot += g[idx(k)] * y[idx(k)];
          for (std::size_t k = 0; k < split.extent; ++k) ga[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
        }
    };
  });
}
}  // namespace detail

/// Max-subtracted softmax along `axis`.
template <std::floating_point T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
  return detail::softmax_impl<T>(a, axis, nullptr);
}

/// Softmax over the last axis of a [B×m] tensor with masked-out positions
/// treated as −∞ (exactly zero probability).
template <std::floating_point T>
Var<T> masked_softmax(const Var<T>& a, const std::vector<std::uint8_t>& mask) {
  detail::require_rank(a.shape(), 2, "masked_softmax");
  if (mask.size() != a.value().numel()) throw DimensionError("masked_softmax: mask size mismatch");
  return detail::softmax_impl<T>(a, 1, &mask);
}

template <std::floating_point T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  return detail::make_op<T>("sum", Tensor<T>::scalar(total), {&a}, [a](detail::Node<T>* self) {
    return [a, self] {
      auto& g = a.node()->grad_buffer();
      const T s = self->grad[0];
      for (auto& v : g.data()) v += s;
    };
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().numel()));
}

template <std::floating_point T>
Var<T> add_n(std::span<const Var<T>> terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tensor<T> out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    detail::require_same(terms[t].shape(), out.shape(), "add_n");
    accumulate(out, terms[t].value());
  }
  std::vector<const Var<T>*> inputs;
  for (const auto& t : terms) inputs.push_back(&t);
  std::vector<Var<T>> held(terms.begin(), terms.end());
  return detail::make_op<T>("add_n", std::move(out), std::span<const Var<T>* const>(inputs), [held = std::move(held)](detail::Node<T>* self) {
    return [held, self] {
      for (const auto& t : held)
        if (t.requires_grad()) accumulate(t.node()->grad_buffer(), self->grad);
    };
  });
}

/// Σ over rows with mask[r] of −log softmax(logits[r])[targets[r]].
/// Returns a scalar; rows without the mask contribute nothing.
template <std::floating_point T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::vector<std::size_t> targets, std::vector<std::uint8_t> mask) {
  const auto& L = logits.value();
  detail::require_rank(L.shape(), 2, "cross_entropy_sum");
  const std::size_t rows = L.dim(0), V = L.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy_sum: one target and one mask entry per row required");
  }
  Tensor<T> probs(L.shape());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] >= V) throw ContractError("cross_entropy_sum: target id out of range");
    const T* row = L.raw() + r * V;
    const T mx = *std::max_element(row, row + V);
    T z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] = std::exp(row[j] - mx) / z;
    total += std::log(z) + mx - row[targets[r]];
  }
  return detail::make_op<T>("cross_entropy_sum", Tensor<T>::scalar(total), {&logits},
                            [logits, probs = std::move(probs), targets = std::move(targets), mask = std::move(mask), V](detail::Node<T>* self) {
    return [logits, probs, targets, mask, V, self] {
      auto& g = logits.node()->grad_buffer();
      const T s = self->grad[0];
      for (std::size_t r = 0; r < targets.size(); ++r) {
        if (!mask[r]) continue;
        for (std::size_t j = 0; j < V; ++j) g[r * V + j] += s * probs[r * V + j];
        g[r * V + targets[r]] -= s;
      }
    };
  });
}

/// Inverted dropout: kept activations are divided by the keep probability,
/// so inference (training == false) is the identity.
template <std::floating_point T>
Var<T> dropout(const Var<T>& a, double drop_probability, Rng& rng, bool training) {
  if (drop_probability < 0.0 || drop_probability >= 1.0) {
    throw ContractError("dropout: drop probability must lie in [0, 1)");
  }
  if (!training || drop_probability == 0.0) return a;
  const T keep_scale = T(1) / static_cast<T>(1.0 - drop_probability);
  Tensor<T> factor(a.shape());
  for (auto& f : factor.data()) f = rng.bernoulli(1.0 - drop_probability) ? keep_scale : T(0);
  return mul(a, Var<T>::constant(std::move(factor)));
}

}  // namespace emoseq
