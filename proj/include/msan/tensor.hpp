#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace msan {

// Every failure carries a short machine-readable category ("dimension",
// "config", "validation", ...) that the CLI maps onto exit diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message),
        category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

[[noreturn]] inline void fail(const std::string& category,
                              const std::string& message) {
  throw Error(category, message);
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// One vertex of the reverse-mode tape. `backward` scatters this node's
// grad into its parents' grads; parents are kept alive by shared_ptr.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      fail("dimension", "value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double v) { return from(Shape{}, {v}); }

  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return from(std::move(s), std::move(v), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v, bool requires_grad = false) {
    return from(Shape{rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }

  std::size_t rows() const {
    if (ndim() != 2) fail("dimension", "rows() on non-matrix " + shape_str(shape()));
    return node_->shape[0];
  }
  std::size_t cols() const {
    if (ndim() != 2) fail("dimension", "cols() on non-matrix " + shape_str(shape()));
    return node_->shape[1];
  }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  double item() const {
    if (size() != 1) fail("contract", "item() on tensor " + shape_str(shape()));
    return node_->values[0];
  }
  double at(std::size_t i) const { return node_->values[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->values[r * cols() + c];
  }

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

inline NodePtr make_result(Shape shape, std::vector<double> values,
                           std::vector<NodePtr> parents) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  for (auto& p : parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  n->parents = std::move(parents);
  return n;
}

inline bool is_scalar(const Tensor& t) { return t.size() == 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: row-major triple loop, k ascending per output element, so results
// are bitwise-reproducible against a brute-force oracle with the same order.
// ---------------------------------------------------------------------------
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    fail("dimension", "matmul shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  auto node = detail::make_result(Shape{m, n}, std::move(out),
                                  {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [m, k, n](TensorNode& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const double* g = self.grad.data();
      if (pa->requires_grad) {
        pa->ensure_grad();
        const double* bv = pb->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p)
              pa->grad[i * k + p] += gij * bv[p * n + j];
          }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        const double* av = pa->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
              pb->grad[p * n + j] += aip * g[i * n + j];
          }
      }
    };
  }
  return Tensor(node);
}

inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) fail("dimension", "transpose expects a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.at(i, j);
  auto node = detail::make_result(Shape{n, m}, std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [m, n](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          p->grad[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// softmax over each row, stabilized by row-max subtraction.
// ---------------------------------------------------------------------------
inline Tensor softmax_rows(const Tensor& x) {
  if (x.ndim() != 2) fail("dimension", "softmax_rows expects a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) fail("dimension", "softmax_rows on empty rows " + shape_str(x.shape()));
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  auto node = detail::make_result(Shape{m, n}, std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [m, n](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.values.data() + i * n;
        const double* g = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
        for (std::size_t j = 0; j < n; ++j)
          p->grad[i * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// pointwise unary ops
// ---------------------------------------------------------------------------
namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd dydx) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x.values()[i]);
  auto node = make_result(x.shape(), std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [dydx](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        p->grad[i] += self.grad[i] * dydx(p->values[i], self.values[i]);
    };
  }
  return Tensor(node);
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                  : std::exp(v) / (1.0 + std::exp(v));
        // keep the output strictly inside (0,1) even when exp saturates
        return std::min(std::max(y, std::numeric_limits<double>::min()),
                        1.0 - std::numeric_limits<double>::epsilon() / 2.0);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

// multiply by a plain constant (no gradient through the constant)
inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// pointwise binary ops; shapes must match or one operand must be scalar
// ---------------------------------------------------------------------------
namespace detail {

enum class BinKind { add, sub, mul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
  const bool asc = is_scalar(a), bsc = is_scalar(b);
  if (!asc && !bsc && a.shape() != b.shape()) {
    fail("dimension", "elementwise shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  const Shape& shape = asc ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a.values()[asc ? 0 : i];
    const double bv = b.values()[bsc ? 0 : i];
    switch (kind) {
      case BinKind::add: out[i] = av + bv; break;
      case BinKind::sub: out[i] = av - bv; break;
      case BinKind::mul: out[i] = av * bv; break;
    }
  }
  auto node = make_result(shape, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [kind, asc, bsc](TensorNode& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const std::size_t n = self.values.size();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double g = self.grad[i];
          if (kind == BinKind::mul) g *= pb->values[bsc ? 0 : i];
          pa->grad[asc ? 0 : i] += g;
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double g = self.grad[i];
          if (kind == BinKind::mul) g *= pa->values[asc ? 0 : i];
          if (kind == BinKind::sub) g = -g;
          pb->grad[bsc ? 0 : i] += g;
        }
      }
    };
  }
  return Tensor(node);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::add);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::sub);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::mul);
}

// ---------------------------------------------------------------------------
// feature-axis concatenation of n×d_i matrices
// ---------------------------------------------------------------------------
inline Tensor concat_feature(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("dimension", "concat_feature needs at least one input");
  const std::size_t n = xs[0].rows();
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != 2 || x.rows() != n) {
      fail("dimension", "concat_feature row mismatch: " + shape_str(x.shape()) +
                            " vs " + std::to_string(n) + " rows");
    }
    total += x.cols();
  }
  std::vector<double> out(n * total);
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[i * total + off + j] = x.at(i, j);
    widths.push_back(d);
    parents.push_back(x.node());
    off += d;
  }
  auto node = detail::make_result(Shape{n, total}, std::move(out),
                                  std::move(parents));
  if (node->requires_grad) {
    node->backward = [n, total, widths](TensorNode& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        const std::size_t d = widths[k];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              p->grad[i * d + j] += self.grad[i * total + off + j];
        }
        off += d;
      }
    };
  }
  return Tensor(node);
}

// row-axis concatenation of matrices with equal width
inline Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("dimension", "concat_rows needs at least one input");
  const std::size_t d = xs[0].cols();
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != 2 || x.cols() != d) {
      fail("dimension", "concat_rows width mismatch: " + shape_str(x.shape()));
    }
    total += x.rows();
  }
  std::vector<double> out;
  out.reserve(total * d);
  std::vector<NodePtr> parents;
  std::vector<std::size_t> row_counts;
  for (const auto& x : xs) {
    out.insert(out.end(), x.values().begin(), x.values().end());
    parents.push_back(x.node());
    row_counts.push_back(x.rows());
  }
  auto node = detail::make_result(Shape{total, d}, std::move(out),
                                  std::move(parents));
  if (node->requires_grad) {
    node->backward = [d, row_counts](TensorNode& self) {
      std::size_t row = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < row_counts[k] * d; ++i)
            p->grad[i] += self.grad[row * d + i];
        }
        row += row_counts[k];
      }
    };
  }
  return Tensor(node);
}

// gather rows of a matrix by index; backward scatter-adds into the source
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (x.ndim() != 2) fail("dimension", "gather_rows expects a matrix");
  if (idx.empty()) fail("empty-sequence", "gather_rows with no indices");
  const std::size_t d = x.cols();
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows())
      fail("dimension", "gather_rows index " + std::to_string(idx[i]) +
                            " out of " + std::to_string(x.rows()));
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.at(idx[i], j);
  }
  auto node = detail::make_result(Shape{idx.size(), d}, std::move(out),
                                  {x.node()});
  if (node->requires_grad) {
    node->backward = [idx, d](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          p->grad[idx[i] * d + j] += self.grad[i * d + j];
    };
  }
  return Tensor(node);
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return gather_rows(x, idx);
}

// ---------------------------------------------------------------------------
// temporal pooling over rows of an n×d matrix
// ---------------------------------------------------------------------------
inline Tensor maxpool_time(const Tensor& x) {
  if (x.ndim() != 2) fail("dimension", "maxpool_time expects a matrix");
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) fail("empty-sequence", "maxpool_time on empty sequence");
  std::vector<double> out(d);
  std::vector<std::size_t> argmax(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = x.at(0, j);
    std::size_t bi = 0;
    for (std::size_t i = 1; i < n; ++i) {
      // ties keep the lowest row index
      if (x.at(i, j) > best) {
        best = x.at(i, j);
        bi = i;
      }
    }
    out[j] = best;
    argmax[j] = bi;
  }
  auto node = detail::make_result(Shape{d}, std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [argmax, d](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t j = 0; j < d; ++j)
        p->grad[argmax[j] * d + j] += self.grad[j];
    };
  }
  return Tensor(node);
}

inline Tensor meanpool_time(const Tensor& x) {
  if (x.ndim() != 2) fail("dimension", "meanpool_time expects a matrix");
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) fail("empty-sequence", "meanpool_time on empty sequence");
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.at(i, j);
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
  auto node = detail::make_result(Shape{d}, std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [n, d](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          p->grad[i * d + j] += self.grad[j] * inv;
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    fail("dimension", "reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto node = detail::make_result(std::move(shape),
                                  std::vector<double>(x.values()), {x.node()});
  if (node->requires_grad) {
    node->backward = [](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        p->grad[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

inline Tensor as_row(const Tensor& v) {
  if (v.ndim() == 2 && v.rows() == 1) return v;
  return reshape(v, Shape{1, v.size()});
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto node = detail::make_result(Shape{}, {s}, {x.node()});
  if (node->requires_grad) {
    node->backward = [](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (double& g : p->grad) g += self.grad[0];
    };
  }
  return Tensor(node);
}

// element i of a vector as a scalar tensor
inline Tensor pick(const Tensor& x, std::size_t i) {
  if (i >= x.size()) fail("contract", "pick index out of range");
  auto node = detail::make_result(Shape{}, {x.values()[i]}, {x.node()});
  if (node->requires_grad) {
    node->backward = [i](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      p->grad[i] += self.grad[0];
    };
  }
  return Tensor(node);
}

// scalars -> vector, preserving order
inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("dimension", "stack_scalars needs at least one input");
  std::vector<double> out;
  std::vector<NodePtr> parents;
  for (const auto& x : xs) {
    if (x.size() != 1) fail("contract", "stack_scalars expects scalars");
    out.push_back(x.values()[0]);
    parents.push_back(x.node());
  }
  auto node = detail::make_result(Shape{xs.size()}, std::move(out),
                                  std::move(parents));
  if (node->requires_grad) {
    node->backward = [](TensorNode& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        auto& p = self.parents[i];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        p->grad[0] += self.grad[i];
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// n-way cross entropy: -log softmax(logits)[target], fused for stability
// ---------------------------------------------------------------------------
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.ndim() != 1) fail("dimension", "cross_entropy expects a vector");
  const std::size_t n = logits.size();
  if (target >= n) fail("contract", "cross_entropy target " + std::to_string(target) +
                                        " out of " + std::to_string(n));
  const double* v = logits.values().data();
  double mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(v[i] - mx);
  const double loss = std::log(sum) - (v[target] - mx);
  auto node = detail::make_result(Shape{}, {loss}, {logits.node()});
  if (node->requires_grad) {
    node->backward = [n, target, mx, sum](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      const double g = self.grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double soft = std::exp(p->values[i] - mx) / sum;
        p->grad[i] += g * (soft - (i == target ? 1.0 : 0.0));
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// reverse pass: topological order from the loss, then run closures in
// reverse. Iterative traversal; graphs can be a few thousand nodes deep.
// ---------------------------------------------------------------------------
inline std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    fail("contract", "backward expects a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto order = topo_order(loss.node().get());
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// Drop parent links so releasing the root cannot recurse deeply through
// shared_ptr chains; parameters themselves are left untouched.
inline void release_graph(const Tensor& root) {
  if (!root.defined()) return;
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<NodePtr> keep_alive;
  std::vector<TensorNode*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (seen.insert(p.get()).second) {
        keep_alive.push_back(p);
        stack.push_back(p.get());
      }
    }
  }
  for (TensorNode* n : order) {
    n->parents.clear();
    n->backward = nullptr;
  }
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace msan
