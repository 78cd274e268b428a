#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tqd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

// One vertex of the define-by-run tape. A node owns its value, its gradient
// buffer (allocated on first use) and a closure that pushes its gradient into
// its parents. Parents are only recorded when some input requires grad.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode differentiation.
///
/// `Tensor` is a cheap handle: copies share the underlying node. Values of
/// non-leaf tensors are fixed once produced; leaves (parameters) may be
/// updated in place through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major matrix literal, e.g. matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rows/cols of a rank-2 tensor; a rank-1 tensor of length n is 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double operator()(std::size_t i) const;
  double operator()(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Populates d(this)/d(leaf) in every requires-grad leaf reachable from
  /// this scalar. Each graph node is visited once, in reverse topological
  /// order. Gradients accumulate into leaves; calling twice on the same
  /// root throws ContractError.
  void backward();

  /// Same values, cut from the graph.
  Tensor detach() const;

  // Used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

/// Builds a result node. Parents and the backward closure are attached only
/// if at least one parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn);

}  // namespace tqd
