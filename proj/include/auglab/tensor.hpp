#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

namespace auglab {

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an op produces NaN/Inf; the training loop maps this to a
// divergence abort.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw TensorError("shape extents must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  long long id = -1;  // assigned when the tensor first touches a tape

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Graph;

class Tensor {
 public:
  Tensor() : impl_(nullptr) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<long long>(data.size()))
      throw TensorError("data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->value = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long long size() const { return static_cast<long long>(impl_->value.size()); }
  int dim() const { return static_cast<int>(impl_->shape.size()); }

  const std::vector<double>& value() const { return impl_->value; }
  // Mutable access is for leaves (optimizer updates, finite differences);
  // mutating a tensor that sits on a live tape invalidates the tape.
  std::vector<double>& data() { return impl_->value; }

  double item() const {
    if (size() != 1) throw TensorError("item() requires a single-element tensor");
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (impl_->grad.empty()) throw TensorError("tensor has no gradient buffer");
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  // Value copy detached from any tape.
  Tensor detached_copy() const { return Tensor(impl_->shape, impl_->value, false); }

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Nodes are recorded in execution order, which is a
// topological order by construction; backward() walks them once in reverse
// and then clears the tape.
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<long long> input_ids;
    long long output_id;
    std::vector<std::shared_ptr<detail::TensorImpl>> keep_alive;
    std::function<void()> backward;
  };

  static Graph& active() {
    thread_local Graph g;
    return g;
  }

  bool recording() const { return no_grad_depth_ == 0; }
  void push_no_grad() { ++no_grad_depth_; }
  void pop_no_grad() { --no_grad_depth_; }

  long long assign_id(detail::TensorImpl* t) {
    if (t->id < 0) t->id = next_id_++;
    return t->id;
  }

  void record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> backward) {
    Node node;
    node.op = op;
    for (const auto& in : inputs) {
      node.input_ids.push_back(assign_id(in.impl()));
      node.keep_alive.push_back(in.impl_ptr());
    }
    node.output_id = assign_id(output.impl());
    node.keep_alive.push_back(output.impl_ptr());
    node.backward = std::move(backward);
    outputs_.insert(output.impl());
    nodes_.push_back(std::move(node));
  }

  bool produced(const Tensor& t) const { return outputs_.count(t.impl()) != 0; }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw TensorError("backward requires a scalar loss");
    if (!loss.requires_grad() || !produced(loss))
      throw TensorError("backward on a detached loss (not on the tape)");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backward) it->backward();
    }
    clear();
  }

  std::size_t size() const { return nodes_.size(); }

  // (op, input ids, output id) triples, for determinism checks.
  std::vector<std::tuple<std::string, std::vector<long long>, long long>> trace() const {
    std::vector<std::tuple<std::string, std::vector<long long>, long long>> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.emplace_back(n.op, n.input_ids, n.output_id);
    return out;
  }

  void clear() {
    for (auto& n : nodes_)
      for (auto& t : n.keep_alive) t->id = -1;
    nodes_.clear();
    outputs_.clear();
    next_id_ = 0;
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_set<detail::TensorImpl*> outputs_;
  long long next_id_ = 0;
  int no_grad_depth_ = 0;
};

// Disables tape recording in scope; forward passes under the guard are
// pure evaluation.
struct NoGradGuard {
  NoGradGuard() { Graph::active().push_no_grad(); }
  ~NoGradGuard() { Graph::active().pop_no_grad(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.value())
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite output of ") + op);
}

inline bool trace_grad(const std::vector<Tensor>& inputs) {
  if (!Graph::active().recording()) return false;
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

// Finalizes an op: finiteness check plus tape recording when needed.
inline Tensor make_result(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                          std::function<void()> backward) {
  check_finite(out, op);
  if (trace_grad(inputs)) {
    out.set_requires_grad(true);
    Graph::active().record(op, inputs, out, std::move(backward));
  }
  return out;
}

inline void accum(const Tensor& t, std::size_t i, double g) {
  t.impl()->ensure_grad();
  t.impl()->grad[i] += g;
}

inline bool grad_ready(const Tensor& out) { return out.has_grad(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Shapes must match exactly, with one exception:
// b may omit the leading batch dimension of a (a.shape == [B] + b.shape),
// in which case b is shared across the batch. No other broadcasting.
// ---------------------------------------------------------------------------

namespace detail {

enum class Pairing { kExact, kBatch };

inline Pairing pairing_of(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Pairing::kExact;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() == sb.size() + 1 &&
      std::equal(sb.begin(), sb.end(), sa.begin() + 1))
    return Pairing::kBatch;
  throw TensorError(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " +
                    shape_str(sb));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::pairing_of(a, b, "add");
  const long long n = a.size(), m = b.size();
  std::vector<double> out(n);
  for (long long i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i % m];
  Tensor result(a.shape(), std::move(out));
  return detail::make_result("add", {a, b}, result, [a, b, result, m]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    if (a.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) detail::accum(a, i, g[i]);
    if (b.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) detail::accum(b, i % m, g[i]);
  });
}

inline Tensor add(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (auto& v : out) v += c;
  Tensor result(a.shape(), std::move(out));
  return detail::make_result("add_scalar", {a}, result, [a, result]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < g.size(); ++i) detail::accum(a, i, g[i]);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::pairing_of(a, b, "mul");
  const long long n = a.size(), m = b.size();
  std::vector<double> out(n);
  for (long long i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i % m];
  Tensor result(a.shape(), std::move(out));
  return detail::make_result("mul", {a, b}, result, [a, b, result, m]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    if (a.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) detail::accum(a, i, g[i] * b.value()[i % m]);
    if (b.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) detail::accum(b, i % m, g[i] * a.value()[i]);
  });
}

inline Tensor mul(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (auto& v : out) v *= c;
  Tensor result(a.shape(), std::move(out));
  return detail::make_result("mul_scalar", {a}, result, [a, result, c]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < g.size(); ++i) detail::accum(a, i, g[i] * c);
  });
}

inline Tensor neg(const Tensor& a) { return mul(a, -1.0); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
inline Tensor sub(const Tensor& a, double c) { return add(a, -c); }

// Multiplies row r of a [B, ...] tensor by s[r]. Complements the trailing
// broadcast of add/mul; used for per-row normalization.
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.dim() < 2 || s.dim() != 1 || s.shape()[0] != a.shape()[0])
    throw TensorError("scale_rows: expected [B,...] and [B]");
  const long long rows = a.shape()[0];
  const long long cols = a.size() / rows;
  std::vector<double> out(a.size());
  for (long long r = 0; r < rows; ++r)
    for (long long c = 0; c < cols; ++c) out[r * cols + c] = a.value()[r * cols + c] * s.value()[r];
  Tensor result(a.shape(), std::move(out));
  return detail::make_result("scale_rows", {a, s}, result, [a, s, result, rows, cols]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (long long r = 0; r < rows; ++r)
      for (long long c = 0; c < cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r * cols + c);
        if (a.requires_grad()) detail::accum(a, i, g[i] * s.value()[r]);
        if (s.requires_grad()) detail::accum(s, r, g[i] * a.value()[i]);
      }
  });
}

// ---------------------------------------------------------------------------
// Unary maps
// ---------------------------------------------------------------------------

namespace detail {

template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  for (long long i = 0; i < a.size(); ++i) out[i] = f(a.value()[i]);
  Tensor result(a.shape(), std::move(out));
  return make_result(name, {a}, result, [a, result, df]() {
    if (!grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      accum(a, i, g[i] * df(a.value()[i], result.value()[i]));
  });
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      "softplus", a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor pow_scalar(const Tensor& a, double p) {
  return detail::unary_op(
      "pow_scalar", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

// Clamp to [lo, hi]; gradient passes through on the closed interval and is
// zero outside (the HSV path relies on this boundary convention).
inline Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw TensorError("clip: lo must not exceed hi");
  return detail::unary_op(
      "clip", a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw TensorError("reshape: element count mismatch");
  Tensor result(std::move(new_shape), a.value());
  return detail::make_result("reshape", {a}, result, [a, result]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < g.size(); ++i) detail::accum(a, i, g[i]);
  });
}

inline Tensor detach(const Tensor& a) { return a.detached_copy(); }

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw TensorError("concat: axis out of range");
  long long axis_total = 0;
  for (const auto& p : parts) {
    if (p.dim() != static_cast<int>(s0.size()))
      throw TensorError("concat: rank mismatch");
    for (int d = 0; d < p.dim(); ++d)
      if (d != axis && p.shape()[d] != s0[d])
        throw TensorError("concat: shape mismatch off the concat axis");
    axis_total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = static_cast<int>(axis_total);

  long long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < static_cast<int>(s0.size()); ++d) inner *= s0[d];

  std::vector<double> out(shape_numel(out_shape));
  long long offset = 0;
  for (const auto& p : parts) {
    const long long pa = p.shape()[axis];
    for (long long o = 0; o < outer; ++o)
      for (long long a2 = 0; a2 < pa; ++a2)
        std::copy_n(p.value().begin() + (o * pa + a2) * inner, inner,
                    out.begin() + (o * axis_total + offset + a2) * inner);
    offset += pa;
  }
  Tensor result(out_shape, std::move(out));
  return detail::make_result("concat", parts, result,
                             [parts, result, outer, inner, axis_total, axis]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    long long off = 0;
    for (const auto& p : parts) {
      const long long pa = p.shape()[axis];
      if (p.requires_grad()) {
        for (long long o = 0; o < outer; ++o)
          for (long long a2 = 0; a2 < pa; ++a2)
            for (long long i = 0; i < inner; ++i)
              detail::accum(p, (o * pa + a2) * inner + i,
                            g[(o * axis_total + off + a2) * inner + i]);
      }
      off += pa;
    }
  });
}

// Flat-index gather: out[i] = a.flat[idx[i]].
inline Tensor gather(const Tensor& a, const std::vector<long long>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.size()) throw TensorError("gather: index out of range");
    out[i] = a.value()[idx[i]];
  }
  Tensor result(Shape{static_cast<int>(idx.size())}, std::move(out));
  return detail::make_result("gather", {a}, result, [a, result, idx]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < idx.size(); ++i) detail::accum(a, idx[i], g[i]);
  });
}

// Per-row gather of a [B, C] tensor: out[r] = a[r, cols[r]].
inline Tensor gather_rows(const Tensor& a, const std::vector<long long>& cols) {
  if (a.dim() != 2) throw TensorError("gather_rows: expected a 2-d tensor");
  const long long b = a.shape()[0], c = a.shape()[1];
  if (static_cast<long long>(cols.size()) != b)
    throw TensorError("gather_rows: one column index per row required");
  std::vector<long long> flat(cols.size());
  for (long long r = 0; r < b; ++r) {
    if (cols[r] < 0 || cols[r] >= c) throw TensorError("gather_rows: column out of range");
    flat[r] = r * c + cols[r];
  }
  return gather(a, flat);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
  Tensor result = Tensor::scalar(s);
  return detail::make_result("sum", {a}, result, [a, result]() {
    if (!detail::grad_ready(result)) return;
    const double g = result.grad()[0];
    for (long long i = 0; i < a.size(); ++i) detail::accum(a, i, g);
  });
}

inline Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor sum_axis(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw TensorError("sum_axis: axis out of range");
  long long outer = 1, inner = 1;
  const long long n = s[axis];
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) inner *= s[d];
  Shape out_shape;
  for (int d = 0; d < static_cast<int>(s.size()); ++d)
    if (d != axis) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> out(outer * inner, 0.0);
  for (long long o = 0; o < outer; ++o)
    for (long long k = 0; k < n; ++k)
      for (long long i = 0; i < inner; ++i)
        out[o * inner + i] += a.value()[(o * n + k) * inner + i];
  Tensor result(out_shape, std::move(out));
  return detail::make_result("sum_axis", {a}, result, [a, result, outer, inner, n]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (long long o = 0; o < outer; ++o)
      for (long long k = 0; k < n; ++k)
        for (long long i = 0; i < inner; ++i)
          detail::accum(a, (o * n + k) * inner + i, g[o * inner + i]);
  });
}

inline Tensor mean_axis(const Tensor& a, int axis) {
  return mul(sum_axis(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Softmax family (max-shifted for stability)
// ---------------------------------------------------------------------------

namespace detail {

template <bool kLog>
Tensor softmax_impl(const char* name, const Tensor& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw TensorError("softmax: axis out of range");
  long long outer = 1, inner = 1;
  const long long n = s[axis];
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) inner *= s[d];

  std::vector<double> out(a.size());
  for (long long o = 0; o < outer; ++o)
    for (long long i = 0; i < inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (long long k = 0; k < n; ++k) mx = std::max(mx, a.value()[(o * n + k) * inner + i]);
      double z = 0.0;
      for (long long k = 0; k < n; ++k) z += std::exp(a.value()[(o * n + k) * inner + i] - mx);
      const double lz = std::log(z);
      for (long long k = 0; k < n; ++k) {
        const double shifted = a.value()[(o * n + k) * inner + i] - mx;
        out[(o * n + k) * inner + i] = kLog ? shifted - lz : std::exp(shifted - lz);
      }
    }
  Tensor result(s, std::move(out));
  return make_result(name, {a}, result, [a, result, outer, inner, n]() {
    if (!grad_ready(result)) return;
    const auto& g = result.grad();
    const auto& y = result.value();
    for (long long o = 0; o < outer; ++o)
      for (long long i = 0; i < inner; ++i) {
        double dot = 0.0;
        for (long long k = 0; k < n; ++k) {
          const std::size_t j = (o * n + k) * inner + i;
          dot += kLog ? g[j] : g[j] * y[j];
        }
        for (long long k = 0; k < n; ++k) {
          const std::size_t j = (o * n + k) * inner + i;
          const double gj = kLog ? g[j] - std::exp(y[j]) * dot : y[j] * (g[j] - dot);
          accum(a, j, gj);
        }
      }
  });
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis = -1) {
  return detail::softmax_impl<false>("softmax", a, axis);
}

inline Tensor log_softmax(const Tensor& a, int axis = -1) {
  return detail::softmax_impl<true>("log_softmax", a, axis);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0])
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const long long m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  for (long long i = 0; i < m; ++i)
    for (long long p = 0; p < k; ++p) {
      const double av = a.value()[i * k + p];
      if (av == 0.0) continue;
      for (long long j = 0; j < n; ++j) out[i * n + j] += av * b.value()[p * n + j];
    }
  Tensor result(Shape{static_cast<int>(m), static_cast<int>(n)}, std::move(out));
  return detail::make_result("matmul", {a, b}, result, [a, b, result, m, k, n]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    if (a.requires_grad())
      for (long long i = 0; i < m; ++i)
        for (long long j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (long long p = 0; p < k; ++p)
            detail::accum(a, i * k + p, gv * b.value()[p * n + j]);
        }
    if (b.requires_grad())
      for (long long i = 0; i < m; ++i)
        for (long long p = 0; p < k; ++p) {
          const double av = a.value()[i * k + p];
          if (av == 0.0) continue;
          for (long long j = 0; j < n; ++j)
            detail::accum(b, p * n + j, av * g[i * n + j]);
        }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw TensorError("transpose: expected a 2-d tensor");
  const long long m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  for (long long i = 0; i < m; ++i)
    for (long long j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  Tensor result(Shape{static_cast<int>(n), static_cast<int>(m)}, std::move(out));
  return detail::make_result("transpose", {a}, result, [a, result, m, n]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (long long i = 0; i < m; ++i)
      for (long long j = 0; j < n; ++j) detail::accum(a, i * n + j, g[j * m + i]);
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling over [N, C, H, W], no padding.
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
  if (x.dim() != 4 || w.dim() != 4) throw TensorError("conv2d: expected 4-d input and weight");
  if (stride < 1) throw TensorError("conv2d: stride must be positive");
  const long long n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const long long cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != cin) throw TensorError("conv2d: channel mismatch");
  if (h < kh || wd < kw) throw TensorError("conv2d: kernel larger than input");
  if (bias.defined() && (bias.dim() != 1 || bias.shape()[0] != cout))
    throw TensorError("conv2d: bias shape mismatch");
  const long long ho = (h - kh) / stride + 1, wo = (wd - kw) / stride + 1;

  std::vector<double> out(n * cout * ho * wo, 0.0);
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (long long b = 0; b < n; ++b)
    for (long long oc = 0; oc < cout; ++oc) {
      const double bv = bias.defined() ? bias.value()[oc] : 0.0;
      for (long long oy = 0; oy < ho; ++oy)
        for (long long ox = 0; ox < wo; ++ox) {
          double acc = bv;
          for (long long ic = 0; ic < cin; ++ic)
            for (long long ky = 0; ky < kh; ++ky) {
              const double* xrow = &xv[((b * cin + ic) * h + oy * stride + ky) * wd + ox * stride];
              const double* wrow = &wv[((oc * cin + ic) * kh + ky) * kw];
              for (long long kx = 0; kx < kw; ++kx) acc += xrow[kx] * wrow[kx];
            }
          out[((b * cout + oc) * ho + oy) * wo + ox] = acc;
        }
    }
  Tensor result(Shape{static_cast<int>(n), static_cast<int>(cout), static_cast<int>(ho),
                      static_cast<int>(wo)},
                std::move(out));
  std::vector<Tensor> inputs = bias.defined() ? std::vector<Tensor>{x, w, bias}
                                              : std::vector<Tensor>{x, w};
  return detail::make_result("conv2d", inputs, result,
                             [x, w, bias, result, n, cin, h, wd, cout, kh, kw, ho, wo, stride]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    const auto& xv = x.value();
    const auto& wv = w.value();
    const bool gx = x.requires_grad(), gw = w.requires_grad();
    const bool gb = bias.defined() && bias.requires_grad();
    if (gx) x.impl()->ensure_grad();
    if (gw) w.impl()->ensure_grad();
    if (gb) bias.impl()->ensure_grad();
    for (long long b = 0; b < n; ++b)
      for (long long oc = 0; oc < cout; ++oc)
        for (long long oy = 0; oy < ho; ++oy)
          for (long long ox = 0; ox < wo; ++ox) {
            const double gv = g[((b * cout + oc) * ho + oy) * wo + ox];
            if (gv == 0.0) continue;
            if (gb) bias.impl()->grad[oc] += gv;
            for (long long ic = 0; ic < cin; ++ic)
              for (long long ky = 0; ky < kh; ++ky) {
                const long long xbase =
                    ((b * cin + ic) * h + oy * stride + ky) * wd + ox * stride;
                const long long wbase = ((oc * cin + ic) * kh + ky) * kw;
                for (long long kx = 0; kx < kw; ++kx) {
                  if (gx) x.impl()->grad[xbase + kx] += gv * wv[wbase + kx];
                  if (gw) w.impl()->grad[wbase + kx] += gv * xv[xbase + kx];
                }
              }
          }
  });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
  return conv2d(x, w, Tensor(), stride);
}

namespace detail {

inline void pool_dims(const Tensor& x, int k, int s, long long& n, long long& c, long long& h,
                      long long& w, long long& ho, long long& wo) {
  if (x.dim() != 4) throw TensorError("pool2d: expected a 4-d tensor");
  if (k < 1 || s < 1) throw TensorError("pool2d: kernel and stride must be positive");
  n = x.shape()[0];
  c = x.shape()[1];
  h = x.shape()[2];
  w = x.shape()[3];
  if (h < k || w < k) throw TensorError("pool2d: kernel larger than input");
  ho = (h - k) / s + 1;
  wo = (w - k) / s + 1;
}

}  // namespace detail

inline Tensor avg_pool2d(const Tensor& x, int k, int s) {
  long long n, c, h, w, ho, wo;
  detail::pool_dims(x, k, s, n, c, h, w, ho, wo);
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(n * c * ho * wo, 0.0);
  for (long long b = 0; b < n * c; ++b)
    for (long long oy = 0; oy < ho; ++oy)
      for (long long ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (long long ky = 0; ky < k; ++ky)
          for (long long kx = 0; kx < k; ++kx)
            acc += x.value()[(b * h + oy * s + ky) * w + ox * s + kx];
        out[(b * ho + oy) * wo + ox] = acc * inv;
      }
  Tensor result(Shape{static_cast<int>(n), static_cast<int>(c), static_cast<int>(ho),
                      static_cast<int>(wo)},
                std::move(out));
  return detail::make_result("avg_pool2d", {x}, result, [x, result, n, c, h, w, ho, wo, k, s,
                                                         inv]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (long long b = 0; b < n * c; ++b)
      for (long long oy = 0; oy < ho; ++oy)
        for (long long ox = 0; ox < wo; ++ox) {
          const double gv = g[(b * ho + oy) * wo + ox] * inv;
          for (long long ky = 0; ky < k; ++ky)
            for (long long kx = 0; kx < k; ++kx)
              detail::accum(x, (b * h + oy * s + ky) * w + ox * s + kx, gv);
        }
  });
}

// Gradient routes to the first maximal element in scan order on ties.
inline Tensor max_pool2d(const Tensor& x, int k, int s) {
  long long n, c, h, w, ho, wo;
  detail::pool_dims(x, k, s, n, c, h, w, ho, wo);
  std::vector<double> out(n * c * ho * wo);
  auto argmax = std::make_shared<std::vector<long long>>(out.size());
  for (long long b = 0; b < n * c; ++b)
    for (long long oy = 0; oy < ho; ++oy)
      for (long long ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        long long best_idx = -1;
        for (long long ky = 0; ky < k; ++ky)
          for (long long kx = 0; kx < k; ++kx) {
            const long long idx = (b * h + oy * s + ky) * w + ox * s + kx;
            if (x.value()[idx] > best) {
              best = x.value()[idx];
              best_idx = idx;
            }
          }
        out[(b * ho + oy) * wo + ox] = best;
        (*argmax)[(b * ho + oy) * wo + ox] = best_idx;
      }
  Tensor result(Shape{static_cast<int>(n), static_cast<int>(c), static_cast<int>(ho),
                      static_cast<int>(wo)},
                std::move(out));
  return detail::make_result("max_pool2d", {x}, result, [x, result, argmax]() {
    if (!detail::grad_ready(result)) return;
    const auto& g = result.grad();
    for (std::size_t i = 0; i < g.size(); ++i) detail::accum(x, (*argmax)[i], g[i]);
  });
}

// ---------------------------------------------------------------------------
// backward entry point and the finite-difference harness
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) { Graph::active().backward(loss); }

// Checks the analytic gradient of a scalar-valued map against central
// differences. Returns the max over coordinates of
// |analytic - fd| / max(1, |analytic|). Throws if two evaluations of f at
// the same point disagree.
inline double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> point,
    double step) {
  if (step <= 0.0) throw TensorError("finite_difference_check: step must be positive");
  for (auto& p : point) p.set_requires_grad(true);

  Tensor loss = f(point);
  if (loss.size() != 1) throw TensorError("finite_difference_check: f must be scalar-valued");
  const double base = loss.item();
  for (auto& p : point) p.zero_grad();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& p : point)
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));

  {
    NoGradGuard ng;
    const double repeat = f(point).item();
    if (repeat != base)
      throw TensorError("finite_difference_check: f is not deterministic");
  }

  double max_rel = 0.0;
  NoGradGuard ng;
  for (std::size_t t = 0; t < point.size(); ++t) {
    for (long long i = 0; i < point[t].size(); ++i) {
      const double orig = point[t].data()[i];
      point[t].data()[i] = orig + step;
      const double fp = f(point).item();
      point[t].data()[i] = orig - step;
      const double fm = f(point).item();
      point[t].data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double a = analytic[t][i];
      const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace auglab
