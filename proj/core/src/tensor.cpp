#include "evomoe/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "evomoe/error.hpp"

namespace evomoe {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
std::size_t Tensor::rows() const {
  const auto c = cols();
  return c == 0 ? 0 : size() / c;
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::at(std::size_t row, std::size_t col) const { return node_->data[row * cols() + col]; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::uint64_t Tensor::id() const { return node_->id; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor::constant(shape(), node_->data); }

std::vector<const detail::Node*> topological_order(const Tensor& root) {
  std::vector<const detail::Node*> order;
  if (!root) return order;
  std::unordered_set<const detail::Node*> seen;
  // Iterative post-order DFS; (node, next-input-index) frames.
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!requires_grad()) return;
  const auto order = topological_order(*this);
  // Interior gradients belong to this sweep only; leaves accumulate.
  for (const auto* n : order)
    if (n->backward) const_cast<detail::Node*>(n)->grad.clear();
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = const_cast<detail::Node*>(*it);
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    std::vector<double>().swap(node->grad);
  }
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* op, detail::BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
  const bool track = grad_mode && std::any_of(inputs.begin(), inputs.end(),
                                              [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(data), track);
  node->op = op;
  if (track) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

}  // namespace evomoe
