#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pdcycon::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;     // persistent accumulator, leaves only
  std::vector<double> adjoint;  // scratch during one backward pass
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.adjoint and adds into the parents' adjoints.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense float64 tensor with an optional reverse-mode gradient record.
/// Copies share storage (handle semantics).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  /// Accumulated gradient; empty span unless requires_grad.
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  /// Reverse pass from a scalar. Gradients are added to every reachable leaf
  /// that requires grad; calling twice doubles them.
  void backward();

  /// A tensor with the same data and no history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Creates the result of an op. History is recorded only when a parent
  /// requires grad and gradient recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread do not record history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Ops. Feature maps are NCHW: [batch, channels, height, width].

/// Cross-correlation, no padding. x [B,C,H,W], weight [O,C,K,K], bias [O].
/// Output [B,O,(H-K)/s+1,(W-K)/s+1]. Throws InputTooSmall if H or W < K.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization over (B, H, W). Training mode uses batch
/// statistics (biased variance) and updates the running estimates with the
/// unbiased variance; eval mode uses the running estimates.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Mean over the listed axes, which are removed from the result shape.
Tensor global_avg_pool(const Tensor& x, std::vector<std::size_t> axes);

/// x [B,in], weight [out,in], bias [out] -> [B,out].
Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Concatenates along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);

/// Sub-range [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Multiplies every slice of x at index k along `axis` by u[k]. With u of
/// shape [n] the same vector scales every batch item; with u of shape [B,n]
/// (axis >= 1) batch item b uses row b.
Tensor scale_along_axis(const Tensor& x, const Tensor& u, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Elementwise weighted sum to a scalar: sum_i w_i x_i.
Tensor dot_const(const Tensor& x, std::span<const double> weights);

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy of probabilities p against labels y (same
/// element count). p is clamped to [1e-7, 1-1e-7]; the clamp is flat.
Tensor bce_loss(const Tensor& p, std::span<const double> y);

/// Same loss evaluated from pre-sigmoid logits; gradient (p - y) / n inside
/// the clamp range.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> y);

/// mean(p log(p/q)) + mean(q log(q/p)) over all elements, with both operands
/// clamped to [1e-7, 1-1e-7].
Tensor bidirectional_kl(const Tensor& p, const Tensor& q);

}  // namespace pdcycon::nn
