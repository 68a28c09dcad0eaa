#include "jhgrf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace jhgrf {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif

std::atomic<std::uint64_t> g_next_tape_id{1};
thread_local Tape* g_active_tape = nullptr;

ImplPtr make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return impl;
}

bool is_tracked(const TensorImpl& t, std::uint64_t tape_id) {
  return t.requires_grad || (t.tape_id != 0 && t.tape_id == tape_id);
}

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

void check_finite(const TensorImpl& t, const char* op) {
  for (double v : t.values) {
    if (!std::isfinite(v)) {
      throw NonFiniteValue(std::string("non-finite value produced by ") + op);
    }
  }
}

// Wraps an op result; records a tape node when any input is tracked on the
// active tape.
Tensor finish(const char* op, ImplPtr out, std::vector<ImplPtr> inputs,
              std::function<void(const Tape::Node&)> rule) {
  if (g_debug_checks.load(std::memory_order_relaxed)) check_finite(*out, op);
  Tape* tape = g_active_tape;
  if (tape != nullptr && !tape->consumed()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [&](const ImplPtr& in) {
      return is_tracked(*in, tape->id());
    });
    if (any) {
      out->tape_id = tape->id();
      out->node = tape->size();
      tape->push(Tape::Node{std::move(inputs), out, std::move(rule)});
    }
  }
  return Tensor(std::move(out));
}

bool needs_grad(const Tape::Node& node, std::size_t input) {
  return is_tracked(*node.inputs[input], node.output->tape_id);
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// For each flat index of `out`, the flat index of the broadcast source `in`.
std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    strides[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  std::vector<std::size_t> map(shape_size(out));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = pos;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      pos += strides[ax];
      if (idx[ax] < out[ax]) break;
      pos -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto& ai = a.impl();
  const auto& bi = b.impl();
  if (ai->shape == bi->shape) {
    const std::size_t n = ai->values.size();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = f(ai->values[k], bi->values[k]);
    auto impl = make_impl(ai->shape, std::move(out));
    return finish(name, impl, {ai, bi}, [da, db](const Tape::Node& node) {
      const auto& x = node.inputs[0]->values;
      const auto& y = node.inputs[1]->values;
      const auto& g = node.output->grad;
      if (needs_grad(node, 0)) {
        auto& gx = grad_buffer(*node.inputs[0]);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * da(x[k], y[k]);
      }
      if (needs_grad(node, 1)) {
        auto& gy = grad_buffer(*node.inputs[1]);
        for (std::size_t k = 0; k < g.size(); ++k) gy[k] += g[k] * db(x[k], y[k]);
      }
    });
  }
  Shape shape = broadcast_shape(ai->shape, bi->shape);
  auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(ai->shape, shape));
  auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(bi->shape, shape));
  std::vector<double> out(ma->size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = f(ai->values[(*ma)[k]], bi->values[(*mb)[k]]);
  }
  auto impl = make_impl(std::move(shape), std::move(out));
  return finish(name, impl, {ai, bi}, [da, db, ma, mb](const Tape::Node& node) {
    const auto& x = node.inputs[0]->values;
    const auto& y = node.inputs[1]->values;
    const auto& g = node.output->grad;
    const bool want_x = needs_grad(node, 0);
    const bool want_y = needs_grad(node, 1);
    std::vector<double>* gx = want_x ? &grad_buffer(*node.inputs[0]) : nullptr;
    std::vector<double>* gy = want_y ? &grad_buffer(*node.inputs[1]) : nullptr;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double xv = x[(*ma)[k]];
      const double yv = y[(*mb)[k]];
      if (gx) (*gx)[(*ma)[k]] += g[k] * da(xv, yv);
      if (gy) (*gy)[(*mb)[k]] += g[k] * db(xv, yv);
    }
  });
}

// `df(x, y)` receives input and output values.
template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& t, F f, DF df) {
  const auto& ti = t.impl();
  std::vector<double> out(ti->values.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(ti->values[k]);
  auto impl = make_impl(ti->shape, std::move(out));
  return finish(name, impl, {ti}, [df](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& x = node.inputs[0]->values;
    const auto& y = node.output->values;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * df(x[k], y[k]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.extent = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeMismatch(std::string(op) + ": undefined tensor");
}

}  // namespace

// ---- Shape helpers ----------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k) os << ',';
    os << shape[k];
  }
  os << ']';
  return os.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeMismatch("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeMismatch("shape " + shape_string(shape) + " needs " +
                        std::to_string(shape_size(shape)) + " values, got " +
                        std::to_string(values.size()));
  }
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      throw NonFiniteValue("non-finite value at flat index " + std::to_string(k));
    }
  }
  return Tensor(make_impl(std::move(shape), std::move(values)));
}

Tensor build_tensor(Shape shape, std::vector<double> values) {
  return Tensor::from(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeMismatch("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size() const { return impl_ ? impl_->values.size() : 0; }

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank())]; }

std::span<const double> Tensor::values() const& { return impl_->values; }

std::span<double> Tensor::mutable_values() & { return impl_->values; }

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on tensor of shape " + shape_string(shape()));
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeMismatch("index rank mismatch");
  std::size_t flat = 0;
  std::size_t k = 0;
  for (std::size_t i : index) {
    if (i >= s[k]) throw ShapeMismatch("index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->values[flat];
}

std::vector<double> Tensor::to_vector() const { return impl_->values; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const& { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

std::optional<std::uint64_t> Tensor::tape_id() const {
  if (!impl_ || impl_->tape_id == 0) return std::nullopt;
  return impl_->tape_id;
}

Tensor Tensor::detach() const { return Tensor(make_impl(impl_->shape, impl_->values)); }

// ---- Tape ---------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

void Tape::push(Node node) { nodes_.push_back(std::move(node)); }

void Tape::mark_consumed() {
  consumed_ = true;
  nodes_.clear();
  nodes_.shrink_to_fit();
}

void backward(const Tensor& loss, Tape& tape) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw NotScalar("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const auto& li = loss.impl();
  if (tape.consumed()) throw DetachedTensor("tape already consumed by a backward pass");
  if (li->tape_id != tape.id()) throw DetachedTensor("loss was not produced on this tape");

  grad_buffer(*li)[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (std::size_t k = li->node + 1; k-- > 0;) {
    const Tape::Node& node = nodes[k];
    if (node.output->grad.empty()) continue;
    node.backward(node);
  }
  tape.mark_consumed();
}

void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }

bool debug_checks() { return g_debug_checks.load(); }

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& t) {
  return unary_op(
      "neg", t, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(const Tensor& t) {
  return unary_op("sigmoid", t, stable_sigmoid,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& t) {
  return unary_op(
      "tanh", t, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& t) {
  return unary_op(
      "relu", t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& t) {
  return unary_op(
      "exp", t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  for (double v : t.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary_op(
      "log", t, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& t) {
  for (double v : t.values()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary_op(
      "sqrt", t, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& t) {
  return unary_op(
      "square", t, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& t) {
  return unary_op(
      "abs", t, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor scale(const Tensor& t, double factor) {
  return unary_op(
      "scale", t, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& t, double offset) {
  return unary_op(
      "shift", t, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

// ---- matmul ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeMismatch("matmul needs rank >= 2, got " + shape_string(as) + " x " +
                        shape_string(bs));
  }
  const std::size_t rows = as[as.size() - 2];
  const std::size_t inner = as.back();
  const std::size_t cols = bs.back();
  if (bs[bs.size() - 2] != inner) {
    throw ShapeMismatch("matmul " + shape_string(as) + " x " + shape_string(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch = broadcast_shape(a_batch, b_batch);
  auto map_a = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(a_batch, batch));
  auto map_b = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(b_batch, batch));

  const std::size_t nbatch = map_a->size();
  const std::size_t a_block = rows * inner;
  const std::size_t b_block = inner * cols;
  const std::size_t c_block = rows * cols;
  std::vector<double> out(nbatch * c_block, 0.0);
  const double* av = a.impl()->values.data();
  const double* bv = b.impl()->values.data();
  for (std::size_t p = 0; p < nbatch; ++p) {
    const double* A = av + (*map_a)[p] * a_block;
    const double* B = bv + (*map_b)[p] * b_block;
    double* C = out.data() + p * c_block;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t k = 0; k < inner; ++k) {
        const double aik = A[i * inner + k];
        if (aik == 0.0) continue;
        const double* brow = B + k * cols;
        double* crow = C + i * cols;
        for (std::size_t j = 0; j < cols; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  Shape shape = batch;
  shape.push_back(rows);
  shape.push_back(cols);
  auto impl = make_impl(std::move(shape), std::move(out));
  return finish("matmul", impl, {a.impl(), b.impl()},
                [map_a, map_b, rows, inner, cols](const Tape::Node& node) {
                  const auto& av = node.inputs[0]->values;
                  const auto& bv = node.inputs[1]->values;
                  const auto& g = node.output->grad;
                  const bool want_a = needs_grad(node, 0);
                  const bool want_b = needs_grad(node, 1);
                  double* ga = want_a ? grad_buffer(*node.inputs[0]).data() : nullptr;
                  double* gb = want_b ? grad_buffer(*node.inputs[1]).data() : nullptr;
                  for (std::size_t p = 0; p < map_a->size(); ++p) {
                    const std::size_t ao = (*map_a)[p] * rows * inner;
                    const std::size_t bo = (*map_b)[p] * inner * cols;
                    const double* G = g.data() + p * rows * cols;
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t k = 0; k < inner; ++k) {
                        if (ga) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < cols; ++j) {
                            acc += G[i * cols + j] * bv[bo + k * cols + j];
                          }
                          ga[ao + i * inner + k] += acc;
                        }
                        if (gb) {
                          const double aik = av[ao + i * inner + k];
                          if (aik == 0.0) continue;
                          for (std::size_t j = 0; j < cols; ++j) {
                            gb[bo + k * cols + j] += aik * G[i * cols + j];
                          }
                        }
                      }
                    }
                  }
                });
}

// ---- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& t) {
  require_defined(t, "sum");
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  auto impl = make_impl({}, {acc});
  return finish("sum", impl, {t.impl()}, [](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const double g = node.output->grad[0];
    for (double& v : grad_buffer(*node.inputs[0])) v += g;
  });
}

Tensor mean(const Tensor& t) {
  require_defined(t, "mean");
  if (t.size() == 0) throw ShapeMismatch("mean of empty tensor");
  return scale(sum(t), 1.0 / static_cast<double>(t.size()));
}

Tensor sum(const Tensor& t, int axis, bool keepdim) {
  require_defined(t, "sum");
  const std::size_t ax = normalize_axis(axis, t.rank());
  const AxisSplit s = split_at(t.shape(), ax);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& v = t.impl()->values;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = v.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  Shape shape = t.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  auto impl = make_impl(std::move(shape), std::move(out));
  return finish("sum_axis", impl, {t.impl()}, [s](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        double* dst = gx.data() + (o * s.extent + e) * s.inner;
        const double* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& t, int axis, bool keepdim) {
  const std::size_t extent = t.dim(axis);
  if (extent == 0) throw ShapeMismatch("mean over empty axis");
  return scale(sum(t, axis, keepdim), 1.0 / static_cast<double>(extent));
}

// ---- softmax ----------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& t) {
  require_defined(t, "softmax_lastdim");
  if (t.rank() == 0 || t.shape().back() == 0) {
    throw ShapeMismatch("softmax_lastdim needs a non-empty last axis");
  }
  const std::size_t len = t.shape().back();
  const std::size_t rows = t.size() / len;
  const auto& x = t.impl()->values;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * len;
    double* yr = out.data() + r * len;
    const double mx = *std::max_element(xr, xr + len);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      yr[k] = std::exp(xr[k] - mx);
      total += yr[k];
    }
    for (std::size_t k = 0; k < len; ++k) yr[k] /= total;
  }
  auto impl = make_impl(t.shape(), std::move(out));
  return finish("softmax_lastdim", impl, {t.impl()}, [len](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& y = node.output->values;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t r = 0; r < y.size() / len; ++r) {
      const std::size_t o = r * len;
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[o + k] * y[o + k];
      for (std::size_t k = 0; k < len; ++k) gx[o + k] += y[o + k] * (g[o + k] - dot);
    }
  });
}

Tensor weighted_softmax_lastdim(const Tensor& logits, const Tensor& weights) {
  require_defined(logits, "weighted_softmax_lastdim");
  require_defined(weights, "weighted_softmax_lastdim");
  if (logits.shape() != weights.shape()) {
    throw ShapeMismatch("weighted softmax: logits " + shape_string(logits.shape()) +
                        " vs weights " + shape_string(weights.shape()));
  }
  if (logits.rank() == 0 || logits.shape().back() == 0) {
    throw ShapeMismatch("weighted softmax needs a non-empty last axis");
  }
  for (double w : weights.values()) {
    if (w < 0.0) throw DomainError("weighted softmax: negative weight");
  }
  const std::size_t len = logits.shape().back();
  const std::size_t rows = logits.size() / len;
  const auto& x = logits.impl()->values;
  const auto& w = weights.impl()->values;
  std::vector<double> out(x.size(), 0.0);
  // Unweighted exponentials exp(x - max) and row normalisers; kept for backward.
  auto expo = std::make_shared<std::vector<double>>(x.size(), 0.0);
  auto norm = std::make_shared<std::vector<double>>(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * len;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) {
      if (w[o + k] > 0.0) mx = std::max(mx, x[o + k]);
    }
    if (!std::isfinite(mx)) continue;  // empty row
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      (*expo)[o + k] = std::exp(x[o + k] - mx);
      total += w[o + k] * (*expo)[o + k];
    }
    (*norm)[r] = total;
    for (std::size_t k = 0; k < len; ++k) out[o + k] = w[o + k] * (*expo)[o + k] / total;
  }
  auto impl = make_impl(logits.shape(), std::move(out));
  return finish("weighted_softmax_lastdim", impl, {logits.impl(), weights.impl()},
                [len, expo, norm](const Tape::Node& node) {
                  const auto& y = node.output->values;
                  const auto& g = node.output->grad;
                  const bool want_x = needs_grad(node, 0);
                  const bool want_w = needs_grad(node, 1);
                  double* gx = want_x ? grad_buffer(*node.inputs[0]).data() : nullptr;
                  double* gw = want_w ? grad_buffer(*node.inputs[1]).data() : nullptr;
                  for (std::size_t r = 0; r < norm->size(); ++r) {
                    const double total = (*norm)[r];
                    if (total == 0.0) continue;
                    const std::size_t o = r * len;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < len; ++k) dot += g[o + k] * y[o + k];
                    for (std::size_t k = 0; k < len; ++k) {
                      const double centred = g[o + k] - dot;
                      if (gx) gx[o + k] += y[o + k] * centred;
                      if (gw) gw[o + k] += (*expo)[o + k] / total * centred;
                    }
                  }
                });
}

// ---- shape manipulation -----------------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape) {
  require_defined(t, "reshape");
  if (shape_size(shape) != t.size()) {
    throw ShapeMismatch("reshape " + shape_string(t.shape()) + " -> " + shape_string(shape));
  }
  auto impl = make_impl(std::move(shape), t.impl()->values);
  return finish("reshape", impl, {t.impl()}, [](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  require_defined(t, "permute");
  const Shape& in = t.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw ShapeMismatch("permute: axis count mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeMismatch("permute: invalid axis list");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t k = rank; k-- > 1;) in_strides[k - 1] = in_strides[k] * in[k];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = in[axes[k]];
    strides[k] = in_strides[axes[k]];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(t.size());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < map->size(); ++flat) {
    (*map)[flat] = pos;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      pos += strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      pos -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  const auto& v = t.impl()->values;
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[(*map)[k]];
  auto impl = make_impl(std::move(out_shape), std::move(out));
  return finish("permute", impl, {t.impl()}, [map](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t k = 0; k < g.size(); ++k) gx[(*map)[k]] += g[k];
  });
}

Tensor transpose(const Tensor& t, int axis_a, int axis_b) {
  const std::size_t a = normalize_axis(axis_a, t.rank());
  const std::size_t b = normalize_axis(axis_b, t.rank());
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a], axes[b]);
  return permute(t, axes);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  std::vector<std::size_t> extents;
  Shape shape = first;
  shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != ax && s[k] != first[k]) {
        throw ShapeMismatch("concat: " + shape_string(s) + " vs " + shape_string(first));
      }
    }
    extents.push_back(s[ax]);
    shape[ax] += s[ax];
  }
  const AxisSplit whole = split_at(shape, ax);
  std::vector<double> out(shape_size(shape));
  std::size_t offset = 0;
  std::vector<ImplPtr> inputs;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].impl()->values;
    const std::size_t block = extents[p] * whole.inner;
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(v.data() + o * block, block,
                  out.data() + o * whole.extent * whole.inner + offset * whole.inner);
    }
    offset += extents[p];
    inputs.push_back(parts[p].impl());
  }
  auto impl = make_impl(std::move(shape), std::move(out));
  return finish("concat", impl, std::move(inputs), [extents, whole](const Tape::Node& node) {
    const auto& g = node.output->grad;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t block = extents[p] * whole.inner;
      if (needs_grad(node, p)) {
        auto& gx = grad_buffer(*node.inputs[p]);
        for (std::size_t o = 0; o < whole.outer; ++o) {
          const double* src = g.data() + o * whole.extent * whole.inner + offset * whole.inner;
          double* dst = gx.data() + o * block;
          for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
        }
      }
      offset += extents[p];
    }
  });
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) { return concat({a, b}, -1); }

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("stack of zero tensors");
  const Shape& first = parts.front().shape();
  const int rank = static_cast<int>(first.size()) + 1;
  const std::size_t ax = normalize_axis(axis, static_cast<std::size_t>(rank));
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != first) throw ShapeMismatch("stack: shape mismatch");
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(ax), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, static_cast<int>(ax));
}

Tensor narrow(const Tensor& t, int axis, std::size_t start, std::size_t length) {
  require_defined(t, "narrow");
  const std::size_t ax = normalize_axis(axis, t.rank());
  const AxisSplit s = split_at(t.shape(), ax);
  if (start + length > s.extent) throw ShapeMismatch("narrow out of range");
  Shape shape = t.shape();
  shape[ax] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto& v = t.impl()->values;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(v.data() + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  auto impl = make_impl(std::move(shape), std::move(out));
  return finish("narrow", impl, {t.impl()}, [s, start, length](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = g.data() + o * length * s.inner;
      double* dst = gx.data() + (o * s.extent + start) * s.inner;
      for (std::size_t k = 0; k < length * s.inner; ++k) dst[k] += src[k];
    }
  });
}

Tensor select(const Tensor& t, int axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, t.rank());
  Shape shape = t.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  return reshape(narrow(t, static_cast<int>(ax), index, 1), shape);
}

Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  require_defined(t, "broadcast_to");
  if (t.rank() > shape.size() || broadcast_shape(t.shape(), shape) != shape) {
    throw ShapeMismatch("cannot broadcast " + shape_string(t.shape()) + " to " +
                        shape_string(shape));
  }
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(t.shape(), shape));
  const auto& v = t.impl()->values;
  std::vector<double> out(map->size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[(*map)[k]];
  auto impl = make_impl(shape, std::move(out));
  return finish("broadcast_to", impl, {t.impl()}, [map](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t k = 0; k < g.size(); ++k) gx[(*map)[k]] += g[k];
  });
}

Tensor straight_through(const Tensor& forward, const Tensor& surrogate) {
  require_defined(forward, "straight_through");
  require_defined(surrogate, "straight_through");
  if (forward.shape() != surrogate.shape()) {
    throw ShapeMismatch("straight_through: " + shape_string(forward.shape()) + " vs " +
                        shape_string(surrogate.shape()));
  }
  auto impl = make_impl(forward.shape(), forward.impl()->values);
  return finish("straight_through", impl, {surrogate.impl()}, [](const Tape::Node& node) {
    if (!needs_grad(node, 0)) return;
    const auto& g = node.output->grad;
    auto& gx = grad_buffer(*node.inputs[0]);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

}  // namespace jhgrf
