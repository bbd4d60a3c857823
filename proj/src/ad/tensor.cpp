#include "svae/ad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "svae/errors.hpp"

namespace svae::ad {

namespace {

thread_local bool g_grad_mode = true;

void check_finite(const char* op, std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << "non-finite " << what << " in op '" << op << "' at element " << i;
      throw NumericFault(msg.str());
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ConfigError("tensor value count " + std::to_string(values.size()) +
                      " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  check_finite("constant", node->value, "value");
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad.assign(t.node_->value.size(), 0.0);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= node_->shape.size()) {
    throw UsageError("dimension index out of range for shape " + shape_string(node_->shape));
  }
  return node_->shape[i];
}

std::size_t Tensor::rank() const { return node_->shape.size(); }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw UsageError("cannot mutate the values of a derived tensor");
  return node_->value;
}

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw UsageError("item() on tensor of shape " + shape_string(node_->shape));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw UsageError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->value.size()) {
    node_->grad.assign(node_->value.size(), 0.0);
  }
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw UsageError("tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return node_->leaf; }
const char* Tensor::op_name() const { return node_->op; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  check_finite(op, values, "value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  node->leaf = false;
  bool tracked = false;
  if (g_grad_mode) {
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

double* grad_target(detail::Node& self, std::size_t parent) {
  auto& p = *self.parents.at(parent);
  if (!p.requires_grad) return nullptr;
  return p.grad.data();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss");
  }
  auto* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->leaf) {
      if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->leaf || !n->backward) continue;
    n->backward(*n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) check_finite(n->op, p->grad, "gradient");
    }
  }
  // Intermediate buffers are not needed after the sweep.
  for (auto* n : order) {
    if (!n->leaf) std::vector<double>().swap(n->grad);
  }
}

}  // namespace svae::ad
