#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace roarbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // pushes this->grad into parents
};

}  // namespace detail

// Dense row-major array of doubles that can take part in a gradient tape.
//
// A Tensor is a handle: copies share the same storage and tape node, the
// way a parameter is shared between a model and its optimizer. Use detach()
// for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, used by optimizers and perturbation loops. Writing
  // into a tensor that is part of a live tape invalidates that tape.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;

  // Reverse-mode sweep from this scalar; every requires_grad node reachable
  // through the tape accumulates d(this)/d(node).
  void backward() const;

  // Independent copy of the values with no tape and no gradient.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  friend std::shared_ptr<detail::Node> node_of(const Tensor&);

  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on the current thread for the guard's lifetime.
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

// The handful of differentiable operations the fixed classifier needs.
namespace ops {

// x: (N, Cin, H, W), w: (Cout, Cin, k, k) with k odd, b: (Cout).
// Stride 1, zero padding k/2, so spatial size is preserved.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

// Non-overlapping k x k max pooling; trailing rows/columns that do not fill
// a window are dropped. Ties resolve to the first element in scan order.
Tensor max_pool2d(const Tensor& x, std::size_t k);

// (N, C, H, W) -> (N, C)
Tensor global_avg_pool(const Tensor& x);

// x: (N, D...) flattened to (N, D), w: (C, D), b: (C) -> (N, C)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Sum of all entries, as a scalar.
Tensor sum(const Tensor& x);

// (N, C) -> (N): out[n] = x[n, index[n]]
Tensor pick(const Tensor& x, std::span<const int> index);

// Mean softmax cross-entropy over the batch, natural log.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ops

}  // namespace roarbench
