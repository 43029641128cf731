#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace calsbi {

// Raised when operand shapes are incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces (or is handed) non-finite numbers.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace calsbi

namespace calsbi::diff {

// Every value is a row-major matrix; shape always holds {rows, cols}.
using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t numel() const { return shape[0] * shape[1]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Value {
 public:
  Value() = default;
  explicit Value(NodePtr node) : node_(std::move(node)) {}

  static Value constant(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return leaf(rows, cols, std::move(data), false);
  }
  static Value constant(std::size_t rows, std::size_t cols, double fill) {
    return leaf(rows, cols, std::vector<double>(rows * cols, fill), false);
  }
  static Value scalar(double v) { return constant(1, 1, std::vector<double>{v}); }
  static Value parameter(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return leaf(rows, cols, std::move(data), true);
  }

  bool valid() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  std::span<const double> data() const { return node_->data; }
  // Direct write access; intended for optimizers and weight loading.
  std::span<double> mutable_data() { return node_->data; }
  double operator()(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const {
    if (numel() != 1) throw ShapeError("item: value of shape " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  // Empty span until a backward pass has touched this value.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Reverse pass from a one-element root. Leaf gradients accumulate across
  // calls; intermediate gradients are recomputed each time.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  static Value leaf(std::size_t rows, std::size_t cols, std::vector<double> data, bool grad) {
    if (data.size() != rows * cols) {
      throw ShapeError("leaf: data length " + std::to_string(data.size()) + " does not match shape [" +
                       std::to_string(rows) + "," + std::to_string(cols) + "]");
    }
    auto n = std::make_shared<Node>();
    n->shape = {rows, cols};
    n->data = std::move(data);
    n->requires_grad = grad;
    n->op = grad ? "parameter" : "constant";
    return Value(std::move(n));
  }

  NodePtr node_;
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

// While alive, new results are detached constants (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Builds a graph node. When no parent requires a gradient the result is a
// detached constant and the backward closure is dropped.
inline Value make_result(std::string op, std::size_t rows, std::size_t cols, std::vector<double> data,
                         std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = {rows, cols};
  n->data = std::move(data);
  n->op = std::move(op);
  bool any = false;
  if (detail::no_grad_depth == 0)
    for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Value(std::move(n));
}

inline void Value::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: root must hold one element, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
}

}  // namespace calsbi::diff
