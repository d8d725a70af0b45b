#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "imt/error.hpp"

namespace imt {

using Shape = std::vector<std::int64_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until the first gradient write
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::uint64_t tape_generation = 0;
  std::size_t node = 0;

  std::vector<double>& grad_buffer();
};

/// Dense row-major float64 array with an optional gradient buffer.
///
/// `Tensor` is a shared handle: copies alias the same storage. Use `clone()`
/// for an independent copy. Results of operations recorded on an active
/// `Tape` carry a link back to their producing node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor uniform(Shape shape, double low, double high, std::mt19937_64& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

  std::span<const double> values() const { return impl_->values; }
  /// Direct write access; only meant for leaves (parameters, inputs).
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  ConstMatrixMap matrix() const;  // view as [prod(leading), last]

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  bool on_tape() const;
  Tensor detach() const;
  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const TensorImpl* id() const { return impl_.get(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Operations record onto the tape installed by the innermost `Tape::Scope`
/// on the current thread; with no active tape they run in inference mode and
/// produce tensors without gradient linkage. `clear()` invalidates every
/// handle recorded so far.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& grad_out)>;

  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  void clear();

  void record(Node node);
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  std::uint64_t generation_;
};

/// Populates gradients of every requires-grad ancestor of `loss`. The tape
/// is cleared afterwards unless `retain_tape` is set.
void backward(const Tensor& loss, bool retain_tape = false);

namespace autograd {

/// True when an op producing from `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

/// Links `output` to a new tape node. `fn` receives the output gradient and
/// must accumulate into the inputs that require grad.
void record(Tensor& output, std::vector<Tensor> inputs, Tape::BackwardFn fn);

/// Adds `delta` into the gradient of `t` when it requires grad.
void accumulate(const Tensor& t, std::span<const double> delta);

}  // namespace autograd

// Tensor operations. Elementwise binaries broadcast NumPy-style.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact GELU: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim = false);
/// Population variance along `axis`.
Tensor variance(const Tensor& x, std::int64_t axis, bool keepdim = false);
/// Maximum along `axis`; the gradient goes to the lowest-index maximum.
Tensor max(const Tensor& x, std::int64_t axis, bool keepdim = false);

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);

/// Gathers rows of `table` [V, D]; result has shape `ids_shape + [D]`.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// Boolean mask with its own shape, broadcast against the filled tensor.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(Shape s, bool fill) : shape(std::move(s)), bits(static_cast<std::size_t>(shape_numel(shape)), fill) {}
  bool operator[](std::size_t i) const { return bits[i] != 0; }
};

/// Replaces entries where `mask` is true with `value`.
Tensor masked_fill(const Tensor& x, const Mask& mask, double value);

Tensor softmax(const Tensor& x, std::int64_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mean negative log-likelihood over positions whose target is not `pad_id`.
/// `logits` is [..., V]; `targets` holds one id per leading position.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, std::int32_t pad_id);

/// Inverted dropout; identity when `p == 0`.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace imt
