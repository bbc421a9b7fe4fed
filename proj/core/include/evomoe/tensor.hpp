#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evomoe {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One record of the autodiff graph. `backward` reads `grad` of this node and
// accumulates into the grad buffers of `inputs`.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  // Zero-initialised on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major tensor of doubles with reverse-mode gradient tracking.
//
// Tensors are cheap handles: copying a Tensor shares the underlying node.
// Values are immutable once produced by an op; only leaf parameters expose
// mutable data (for the optimizer) and grad buffers are written by backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  // 2-D view: leading extents folded into rows, last extent is columns.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  std::uint64_t id() const;

  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this scalar. Gradients accumulate (+=).
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            const char*, detail::BackwardFn);
};

// Build an op result. History is recorded only when grad mode is enabled and
// at least one input requires grad. Throws NumericError on non-finite output.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* op, detail::BackwardFn backward);

bool grad_enabled();

// Disables graph recording for the guard's lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topological order of the graph reachable from `root` (inputs first).
std::vector<const detail::Node*> topological_order(const Tensor& root);

}  // namespace evomoe
