#include "icil/numerics/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace icil::num {

namespace {

thread_local bool t_grad_enabled = true;
bool g_finite_checks = true;

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("use of an undefined Tensor");
  return *node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("dim(" + std::to_string(axis) + ") out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<float> Tensor::data() { return checked(node_).data; }
std::span<const float> Tensor::data() const { return checked(node_).data; }

std::span<const float> Tensor::grad() const { return checked(node_).grad; }
std::span<float> Tensor::mutable_grad() { return checked(node_).grad_buffer(); }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

void Tensor::zero_grad() {
  auto& g = checked(node_).grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
void Tensor::set_requires_grad(bool on) { checked(node_).requires_grad = on; }
bool Tensor::is_leaf() const { return checked(node_).is_leaf; }

float Tensor::item() const {
  const auto& n = checked(node_);
  if (n.data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
  return n.data[0];
}

float Tensor::at(std::initializer_list<int> index) const {
  const auto& n = checked(node_);
  if (index.size() != n.shape.size()) throw ShapeError("at(): rank mismatch for shape " + shape_str(n.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (int i : index) {
    if (i < 0 || i >= n.shape[axis]) throw ShapeError("at(): index out of range for shape " + shape_str(n.shape));
    flat = flat * static_cast<std::size_t>(n.shape[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return n.data[flat];
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return from(n.shape, n.data, n.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return from(n.shape, n.data, false);
}

const char* Tensor::op_name() const { return checked(node_).op; }

void backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw std::logic_error("backward() on an undefined Tensor");
  if (root->data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) throw std::logic_error("backward(): loss does not require grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (!node->is_leaf) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace icil::num
