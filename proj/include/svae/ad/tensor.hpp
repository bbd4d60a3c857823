#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace svae::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Reference-counted handle to a node of the reverse-mode graph.
///
/// Values are 64-bit floats stored row-major. Leaves created with
/// `parameter()` own a gradient buffer that accumulates across `backward()`
/// calls until `zero_grad()`. Intermediate nodes are freed with the last
/// handle, which is how a training step resets its graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Mutable access is limited to leaves; derived values are immutable.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every tracked leaf.
/// Leaf gradients accumulate; intermediate gradients are recomputed per call.
void backward(const Tensor& loss);

/// While alive, ops on this thread do not record the graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Builds a derived node. When any parent requires grad (and grad mode is
/// on) the node is linked into the graph with `backward_fn`; otherwise the
/// closure is dropped. Throws NumericFault if `values` holds NaN/Inf.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn);

/// Grad buffer of a parent inside a backward closure, or nullptr when that
/// parent is not tracked.
double* grad_target(detail::Node& self, std::size_t parent);

}  // namespace svae::ad
