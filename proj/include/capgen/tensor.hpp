#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "capgen/error.hpp"

namespace capgen {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

// One executed operation (or leaf) in the dynamic reverse-mode graph.
// `seq` is the execution order; the reverse sweep visits nodes in strictly
// decreasing seq, which is a valid topological order because every parent
// is created before its children.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool swept = false;  // a loss node may drive only one backward pass
  std::uint64_t seq = 0;
  std::uint64_t mark = 0;  // DFS bookkeeping for backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
};

inline std::uint64_t& node_seq_counter() {
  thread_local std::uint64_t c = 0;
  return c;
}

inline std::uint64_t& visit_epoch() {
  thread_local std::uint64_t e = 0;
  return e;
}

inline bool& grad_recording() {
  thread_local bool on = true;
  return on;
}

}  // namespace detail

/// Disables graph recording in the current scope (evaluation / decoding).
struct NoGradGuard {
  NoGradGuard() : previous_(detail::grad_recording()) { detail::grad_recording() = false; }
  ~NoGradGuard() { detail::grad_recording() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense tensor of 64-bit reals, row-major, rank 0..2 in practice.
/// Value-semantics handle to a graph node; copying shares the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    return make(std::move(shape), v, requires_grad);
  }

  static Tensor of(Shape shape, std::vector<double> data, bool requires_grad = false) {
    check_shape(shape);
    if (numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->value.size(), 0.0);
    t.node_->seq = ++detail::node_seq_counter();
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return of(Shape{}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  /// Mutable view; legal only between training steps (leaves only).
  std::span<double> values_mut() { return node_->value; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
  }
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape[1] + c]; }

  std::span<const double> grad() const {
    if (!node_->requires_grad) throw ContractError("grad() on tensor without requires_grad");
    return node_->grad;
  }
  std::span<double> grad_mut() {
    if (!node_->requires_grad) throw ContractError("grad_mut() on tensor without requires_grad");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Reverse sweep from a scalar loss. Accumulates gradients into every
  /// requires_grad tensor reachable from this node. One sweep per graph.
  void backward() {
    if (!defined() || size() != 1) {
      throw ContractError("backward() requires a scalar loss tensor");
    }
    detail::Node* root = node_.get();
    if (root->swept) {
      throw ContractError("backward() called twice on the same loss");
    }
    if (!root->requires_grad) {
      throw ContractError("backward() on a loss that requires no gradients");
    }
    root->swept = true;

    // Collect the subgraph reachable from the loss, then run backprop
    // closures in reverse execution order.
    const std::uint64_t epoch = ++detail::visit_epoch();
    std::vector<detail::Node*> nodes;
    std::vector<detail::Node*> stack{root};
    root->mark = epoch;
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && p->mark != epoch) {
          p->mark = epoch;
          stack.push_back(p.get());
        }
      }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
    root->grad.assign(1, 1.0);
    for (detail::Node* n : nodes) {
      if (n->backprop) n->backprop(*n);
    }
  }

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  static void check_shape(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
    }
  }

  static Tensor make(Shape shape, double fill, bool requires_grad) {
    check_shape(shape);
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->value.assign(numel(shape), fill);
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->value.size(), 0.0);
    t.node_->seq = ++detail::node_seq_counter();
    return t;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backprop) {
  const bool record = grad_recording() &&
                      std::any_of(parents.begin(), parents.end(),
                                  [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::of(std::move(shape), std::move(value), record);
  if (record) {
    Node* n = out.node();
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node_ptr());
    n->backprop = std::move(backprop);
  }
  return out;
}

// Accumulate src into the grad buffer of parent i, if it participates.
inline void add_grad(Node& self, std::size_t i, const std::vector<double>& src) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return;
  for (std::size_t j = 0; j < src.size(); ++j) p.grad[j] += src[j];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_scalar(const Tensor& t) { return t.size() == 1 && t.rank() == 0; }

// add/sub/hadamard allow equal shapes, or a rank-0 scalar on either side.
inline void check_elementwise(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || is_scalar(a) || is_scalar(b)) return;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_elementwise(a, b, "add");
  const bool sa = detail::is_scalar(a), sb = detail::is_scalar(b);
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.at(sa ? 0 : i) + b.at(sb ? 0 : i);
  Shape shape = sa ? b.shape() : a.shape();
  return detail::make_op(std::move(shape), std::move(out), {a, b}, [sa, sb](detail::Node& s) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& p = *s.parents[k];
      if (!p.requires_grad) continue;
      const bool scalar = (k == 0) ? sa : sb;
      if (scalar) {
        for (double g : s.grad) p.grad[0] += g;
      } else {
        for (std::size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_elementwise(a, b, "sub");
  const bool sa = detail::is_scalar(a), sb = detail::is_scalar(b);
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.at(sa ? 0 : i) - b.at(sb ? 0 : i);
  Shape shape = sa ? b.shape() : a.shape();
  return detail::make_op(std::move(shape), std::move(out), {a, b}, [sa, sb](detail::Node& s) {
    detail::Node& pa = *s.parents[0];
    if (pa.requires_grad) {
      if (sa) {
        for (double g : s.grad) pa.grad[0] += g;
      } else {
        for (std::size_t i = 0; i < s.grad.size(); ++i) pa.grad[i] += s.grad[i];
      }
    }
    detail::Node& pb = *s.parents[1];
    if (pb.requires_grad) {
      if (sb) {
        for (double g : s.grad) pb.grad[0] -= g;
      } else {
        for (std::size_t i = 0; i < s.grad.size(); ++i) pb.grad[i] -= s.grad[i];
      }
    }
  });
}

/// Elementwise product (the masking primitive).
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::check_elementwise(a, b, "hadamard");
  const bool sa = detail::is_scalar(a), sb = detail::is_scalar(b);
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.at(sa ? 0 : i) * b.at(sb ? 0 : i);
  Shape shape = sa ? b.shape() : a.shape();
  return detail::make_op(std::move(shape), std::move(out), {a, b}, [sa, sb](detail::Node& s) {
    detail::Node& pa = *s.parents[0];
    detail::Node& pb = *s.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) {
        pa.grad[sa ? 0 : i] += s.grad[i] * pb.value[sb ? 0 : i];
      }
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) {
        pb.grad[sb ? 0 : i] += s.grad[i] * pa.value[sa ? 0 : i];
      }
    }
  });
}

inline Tensor scalar_mul(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a.at(i);
  return detail::make_op(a.shape(), std::move(out), {a}, [c](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += c * s.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.at(i);
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < s.grad.size(); ++i) {
      const double y = s.value[i];
      p.grad[i] += s.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a.at(i));
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < s.grad.size(); ++i) {
      const double y = s.value[i];
      p.grad[i] += s.grad[i] * (1.0 - y * y);
    }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.at(i) <= 0.0) {
      throw DomainError("log of non-positive value " + std::to_string(a.at(i)));
    }
    out[i] = std::log(a.at(i));
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i] / p.value[i];
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a.at(i));
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i] * s.value[i];
  });
}

/// Mean along `axis` of a matrix ([m x n] -> [n] for axis 0, [m] for axis 1),
/// or of a vector (axis 0 -> scalar).
inline Tensor mean_over(const Tensor& a, std::size_t axis) {
  if (a.rank() == 1) {
    if (axis != 0) throw DimensionError("mean_over: axis out of range for vector");
    const std::size_t n = a.size();
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += a.at(i);
    m /= static_cast<double>(n);
    return detail::make_op(Shape{}, {m}, {a}, [n](detail::Node& s) {
      detail::Node& p = *s.parents[0];
      const double g = s.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) p.grad[i] += g;
    });
  }
  if (a.rank() != 2 || axis > 1) {
    throw DimensionError("mean_over: expected matrix and axis 0/1, got " + shape_str(a.shape()));
  }
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (axis == 0) {
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[c] += a.at(r, c);
    for (double& v : out) v /= static_cast<double>(rows);
    return detail::make_op(Shape{cols}, std::move(out), {a}, [rows, cols](detail::Node& s) {
      detail::Node& p = *s.parents[0];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          p.grad[r * cols + c] += s.grad[c] / static_cast<double>(rows);
    });
  }
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += a.at(r, c);
    out[r] /= static_cast<double>(cols);
  }
  return detail::make_op(Shape{rows}, std::move(out), {a}, [rows, cols](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        p.grad[r * cols + c] += s.grad[r] / static_cast<double>(cols);
  });
}

/// Concatenation of two vectors (axis 0) or matrices (axis 0 stacks rows,
/// axis 1 stacks columns).
inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() == 1 && b.rank() == 1) {
    if (axis != 0) throw DimensionError("concat: axis out of range for vectors");
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const std::size_t na = a.size();
    return detail::make_op(Shape{a.size() + b.size()}, std::move(out), {a, b},
                           [na](detail::Node& s) {
                             detail::Node& pa = *s.parents[0];
                             detail::Node& pb = *s.parents[1];
                             if (pa.requires_grad)
                               for (std::size_t i = 0; i < na; ++i) pa.grad[i] += s.grad[i];
                             if (pb.requires_grad)
                               for (std::size_t i = na; i < s.grad.size(); ++i)
                                 pb.grad[i - na] += s.grad[i];
                           });
  }
  if (a.rank() != 2 || b.rank() != 2 || axis > 1) {
    throw DimensionError("concat: expected two vectors or two matrices, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (axis == 0) {
    if (a.shape()[1] != b.shape()[1]) {
      throw DimensionError("concat axis 0: column counts differ: " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const std::size_t na = a.size();
    return detail::make_op(Shape{a.shape()[0] + b.shape()[0], a.shape()[1]}, std::move(out),
                           {a, b}, [na](detail::Node& s) {
                             detail::Node& pa = *s.parents[0];
                             detail::Node& pb = *s.parents[1];
                             if (pa.requires_grad)
                               for (std::size_t i = 0; i < na; ++i) pa.grad[i] += s.grad[i];
                             if (pb.requires_grad)
                               for (std::size_t i = na; i < s.grad.size(); ++i)
                                 pb.grad[i - na] += s.grad[i];
                           });
  }
  if (a.shape()[0] != b.shape()[0]) {
    throw DimensionError("concat axis 1: row counts differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * (ca + cb) + c] = a.at(r, c);
    for (std::size_t c = 0; c < cb; ++c) out[r * (ca + cb) + ca + c] = b.at(r, c);
  }
  return detail::make_op(Shape{rows, ca + cb}, std::move(out), {a, b},
                         [rows, ca, cb](detail::Node& s) {
                           detail::Node& pa = *s.parents[0];
                           detail::Node& pb = *s.parents[1];
                           for (std::size_t r = 0; r < rows; ++r) {
                             if (pa.requires_grad)
                               for (std::size_t c = 0; c < ca; ++c)
                                 pa.grad[r * ca + c] += s.grad[r * (ca + cb) + c];
                             if (pb.requires_grad)
                               for (std::size_t c = 0; c < cb; ++c)
                                 pb.grad[r * cb + c] += s.grad[r * (ca + cb) + ca + c];
                           }
                         });
}

/// Element gather from a vector; duplicate indices accumulate gradient.
inline Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() != 1) throw DimensionError("gather: expected vector, got " + shape_str(a.shape()));
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.size()) {
      throw DimensionError("gather: index " + std::to_string(indices[i]) + " out of range " +
                           std::to_string(a.size()));
    }
    out[i] = a.at(indices[i]);
  }
  return detail::make_op(Shape{indices.size()}, std::move(out), {a}, [indices](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < indices.size(); ++i) p.grad[indices[i]] += s.grad[i];
  });
}

/// Row gather from a matrix ([m x n] with k indices -> [k x n]).
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  if (a.rank() != 2) {
    throw DimensionError("gather_rows: expected matrix, got " + shape_str(a.shape()));
  }
  const std::size_t cols = a.shape()[1];
  std::vector<double> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.shape()[0]) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range " +
                           std::to_string(a.shape()[0]));
    }
    for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] = a.at(rows[i], c);
  }
  return detail::make_op(Shape{rows.size(), cols}, std::move(out), {a},
                         [rows, cols](detail::Node& s) {
                           detail::Node& p = *s.parents[0];
                           for (std::size_t i = 0; i < rows.size(); ++i)
                             for (std::size_t c = 0; c < cols; ++c)
                               p.grad[rows[i] * cols + c] += s.grad[i * cols + c];
                         });
}

/// Single matrix row as a vector (embedding lookup).
inline Tensor row(const Tensor& a, std::size_t r) {
  if (a.rank() != 2) throw DimensionError("row: expected matrix, got " + shape_str(a.shape()));
  if (r >= a.shape()[0]) {
    throw DimensionError("row: index " + std::to_string(r) + " out of range " +
                         std::to_string(a.shape()[0]));
  }
  const std::size_t cols = a.shape()[1];
  std::vector<double> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = a.at(r, c);
  return detail::make_op(Shape{cols}, std::move(out), {a}, [r, cols](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += s.grad[c];
  });
}

/// Contiguous vector slice [start, start+len).
inline Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1) throw DimensionError("slice: expected vector, got " + shape_str(a.shape()));
  if (start + len > a.size()) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + std::to_string(a.size()));
  }
  std::vector<double> out(a.values().begin() + start, a.values().begin() + start + len);
  return detail::make_op(Shape{len}, std::move(out), {a}, [start, len](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    for (std::size_t i = 0; i < len; ++i) p.grad[start + i] += s.grad[i];
  });
}

/// Single element as a rank-0 scalar.
inline Tensor pick(const Tensor& a, std::size_t i) {
  if (i >= a.size()) {
    throw DimensionError("pick: index " + std::to_string(i) + " out of range " +
                         std::to_string(a.size()));
  }
  return detail::make_op(Shape{}, {a.at(i)}, {a}, [i](detail::Node& s) {
    s.parents[0]->grad[i] += s.grad[0];
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Matrix product. Supports [m x k]·[k x n] -> [m x n], matrix·vector and
/// vector·matrix.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
      throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " · " +
                           shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a.at(i, p);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(p, j);
      }
    return detail::make_op(Shape{m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& s) {
      detail::Node& pa = *s.parents[0];
      detail::Node& pb = *s.parents[1];
      if (pa.requires_grad) {  // dA = dC · B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += s.grad[i * n + j] * pb.value[p * n + j];
            pa.grad[i * k + p] += acc;
          }
      }
      if (pb.requires_grad) {  // dB = A^T · dC
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += pa.value[i * k + p] * s.grad[i * n + j];
            pb.grad[p * n + j] += acc;
          }
      }
    });
  }
  if (a.rank() == 2 && b.rank() == 1) {
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    if (b.size() != k) {
      throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " · " +
                           shape_str(b.shape()));
    }
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p);
      out[i] = acc;
    }
    return detail::make_op(Shape{m}, std::move(out), {a, b}, [m, k](detail::Node& s) {
      detail::Node& pa = *s.parents[0];
      detail::Node& pb = *s.parents[1];
      if (pa.requires_grad) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) pa.grad[i * k + p] += s.grad[i] * pb.value[p];
      }
      if (pb.requires_grad) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += pa.value[i * k + p] * s.grad[i];
          pb.grad[p] += acc;
        }
      }
    });
  }
  if (a.rank() == 1 && b.rank() == 2) {
    const std::size_t k = a.size(), n = b.shape()[1];
    if (b.shape()[0] != k) {
      throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " · " +
                           shape_str(b.shape()));
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(p);
      for (std::size_t j = 0; j < n; ++j) out[j] += av * b.at(p, j);
    }
    return detail::make_op(Shape{n}, std::move(out), {a, b}, [k, n](detail::Node& s) {
      detail::Node& pa = *s.parents[0];
      detail::Node& pb = *s.parents[1];
      if (pa.requires_grad) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += pb.value[p * n + j] * s.grad[j];
          pa.grad[p] += acc;
        }
      }
      if (pb.requires_grad) {
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += pa.value[p] * s.grad[j];
      }
    });
  }
  throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape()) + " · " +
                       shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// softmax / log_softmax (max-subtracted for stability)
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a) {
  if (a.rank() != 1 || a.size() == 0) {
    throw DimensionError("softmax: expected non-empty vector, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.size();
  double mx = a.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.at(i));
  std::vector<double> out(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(a.at(i) - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return detail::make_op(a.shape(), std::move(out), {a}, [n](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += s.grad[i] * s.value[i];
    for (std::size_t i = 0; i < n; ++i) p.grad[i] += s.value[i] * (s.grad[i] - dot);
  });
}

inline Tensor log_softmax(const Tensor& a) {
  if (a.rank() != 1 || a.size() == 0) {
    throw DimensionError("log_softmax: expected non-empty vector, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.size();
  double mx = a.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.at(i));
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(a.at(i) - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.at(i) - lse;
  return detail::make_op(a.shape(), std::move(out), {a}, [n](detail::Node& s) {
    detail::Node& p = *s.parents[0];
    double gsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) gsum += s.grad[i];
    for (std::size_t i = 0; i < n; ++i) {
      p.grad[i] += s.grad[i] - std::exp(s.value[i]) * gsum;
    }
  });
}

}  // namespace capgen
