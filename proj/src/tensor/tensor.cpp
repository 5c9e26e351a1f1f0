#include "etd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "etd/error.hpp"

namespace etd {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, detail::Buffer data,
                                       bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) {
      fail(ErrorCode::dimension, "tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

detail::Buffer& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  detail::Buffer data(shape_numel(shape), value);
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    fail(ErrorCode::dimension, "shape " + shape_str(shape) + " does not hold " +
                                   std::to_string(data.size()) + " values");
  }
  return Tensor(new_node(std::move(shape), detail::Buffer(data.begin(), data.end()), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

detail::Node& Tensor::checked() const {
  if (!node_) fail(ErrorCode::usage, "use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorCode::dimension, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
  auto& n = checked();
  if (n.data.size() != 1) {
    fail(ErrorCode::usage, "item() needs a single-element tensor, got " + shape_str(n.shape));
  }
  return n.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) {
    fail(ErrorCode::dimension, "index rank does not match " + shape_str(n.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) fail(ErrorCode::dimension, "index out of range for " + shape_str(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.data[flat];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool on) { checked().requires_grad = on; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::vector<double> Tensor::grad() const {
  const auto& n = checked();
  if (n.grad.empty()) return std::vector<double>(n.data.size(), 0.0);
  return std::vector<double>(n.grad.begin(), n.grad.end());
}

std::span<double> Tensor::mutable_grad() { return checked().grad_buffer(); }

void Tensor::zero_grad() { checked().grad.clear(); }

std::uint64_t Tensor::id() const { return checked().id; }

const char* Tensor::op_name() const { return checked().op; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  for (const auto& in : checked().inputs) out.emplace_back(in);
  return out;
}

Tensor Tensor::detach() const {
  const auto& n = checked();
  return Tensor(new_node(n.shape, n.data, false));
}

std::vector<Tensor> topological_order(const Tensor& root) {
  std::vector<Tensor> order;
  if (!root.defined()) return order;
  std::unordered_set<const detail::Node*> seen;
  // Iterative post-order DFS; inputs are emitted before their consumers.
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order.emplace_back(std::move(node));
    stack.pop_back();
  }
  return order;
}

void Tensor::backward(bool keep_intermediate_grads) const {
  auto& n = checked();
  if (n.data.size() != 1) {
    fail(ErrorCode::usage, "backward() needs a scalar loss, got " + shape_str(n.shape));
  }
  if (!n.requires_grad) {
    fail(ErrorCode::usage, "backward() on a tensor that does not require grad");
  }
  auto order = topological_order(*this);
  n.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = *it->node();
    if (!node.backward || node.grad.empty()) continue;
    node.backward(node);
    if (!keep_intermediate_grads && !node.inputs.empty() && &node != node_.get()) {
      node.grad.clear();
      node.grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }

NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return grad_enabled; }

Tensor detail::make_result(const char* op, Shape shape, Buffer data,
                           std::vector<Tensor> const& inputs,
                           std::function<void(Node&)> backward) {
  bool track = false;
  if (grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(data), track);
  node->op = op;
  if (track) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace etd
