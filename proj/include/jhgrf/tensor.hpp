#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jhgrf/errors.hpp"

namespace jhgrf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0: not produced on any tape
  std::size_t node = 0;
};

}  // namespace detail

// Dense row-major float64 array with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage. Values of a tensor
// produced by an op are never modified afterwards; only leaves (parameters)
// are mutated, and only between training steps.
class Tensor {
 public:
  Tensor() = default;

  // Throws ShapeMismatch if the element count disagrees with the shape and
  // NonFiniteValue if any entry is NaN or infinite.
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Trainable leaf: gradients accumulate into it during backward.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  // Spans alias the storage; not available on temporaries.
  std::span<const double> values() const&;
  std::span<const double> values() const&& = delete;
  std::span<double> mutable_values() &;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  void zero_grad();
  void clear_grad();

  std::optional<std::uint64_t> tape_id() const;

  // Same values, no history and no gradient tracking.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal access for op implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor build_tensor(Shape shape, std::vector<double> values);

// Record of differentiable operations executed while the tape is active.
// A tape is consumed by exactly one backward pass.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(const Node&)> backward;
  };

  // RAII activation: ops executed while a Recording is alive are recorded
  // onto the tape. Recordings nest; the innermost wins.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Recording record() { return Recording(*this); }

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

  // Used by op implementations.
  void push(Node node);
  const std::vector<Node>& nodes() const { return nodes_; }
  void mark_consumed();

 private:
  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Suspends recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

// Populates grad on every tracked tensor reachable from `loss`.
// Throws NotScalar for a non-scalar loss and DetachedTensor when `loss` was not
// produced on `tape` or the tape has already been consumed.
void backward(const Tensor& loss, Tape& tape);

// When enabled, every op output is scanned for NaN/Inf and NonFiniteValue is
// thrown at the first offending op. Defaults to on in builds without NDEBUG.
void set_debug_checks(bool enabled);
bool debug_checks();

// ---- elementwise (numpy broadcasting for binary ops) ----------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor tanh(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor exp(const Tensor& t);
// DomainError for non-positive input.
Tensor log(const Tensor& t);
// DomainError for negative input.
Tensor sqrt(const Tensor& t);
Tensor square(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor scale(const Tensor& t, double factor);
Tensor shift(const Tensor& t, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& t) { return neg(t); }
inline Tensor operator*(const Tensor& t, double k) { return scale(t, k); }
inline Tensor operator*(double k, const Tensor& t) { return scale(t, k); }
inline Tensor operator+(const Tensor& t, double k) { return shift(t, k); }
inline Tensor operator+(double k, const Tensor& t) { return shift(t, k); }
inline Tensor operator-(const Tensor& t, double k) { return shift(t, -k); }
inline Tensor operator-(double k, const Tensor& t) { return shift(neg(t), k); }

// ---- linear algebra -------------------------------------------------------

// a: [..., M, K], b: [..., K, N]; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor sum(const Tensor& t, int axis, bool keepdim = false);
Tensor mean(const Tensor& t, int axis, bool keepdim = false);

// ---- normalised distributions ---------------------------------------------

// Max-subtracted softmax over the last axis.
Tensor softmax_lastdim(const Tensor& t);

// Softmax over the last axis restricted by non-negative membership weights:
//   y_k = w_k exp(x_k) / sum_l w_l exp(x_l)
// Rows whose weights are all zero produce zeros. With 0/1 weights this is the
// softmax over the selected subset. `logits` and `weights` share one shape.
Tensor weighted_softmax_lastdim(const Tensor& logits, const Tensor& weights);

// ---- shape manipulation ---------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& t, int axis_a, int axis_b);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor stack(const std::vector<Tensor>& parts, int axis);
// Removes `axis`, keeping slice `index`.
Tensor select(const Tensor& t, int axis, std::size_t index);
Tensor narrow(const Tensor& t, int axis, std::size_t start, std::size_t length);
Tensor broadcast_to(const Tensor& t, const Shape& shape);

// Values of `forward`, gradient routed unchanged to `surrogate` (same shape).
Tensor straight_through(const Tensor& forward, const Tensor& surrogate);

// Shape that numpy broadcasting of `a` and `b` would produce.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace jhgrf
