#include "tqd/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "tqd/errors.hpp"

namespace tqd {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.front().size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(values), requires_grad);
}

detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::size() const { return checked().data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() == 2) return s[0];
  throw DimensionError("rows() needs rank <= 2, got " + shape_str(s));
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  throw DimensionError("cols() needs rank <= 2, got " + shape_str(s));
}

std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::mutable_data() { return checked().data; }
std::vector<double> Tensor::to_vector() const { return checked().data; }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return checked().data[0];
}

double Tensor::operator()(std::size_t i) const { return checked().data.at(i); }

double Tensor::operator()(std::size_t r, std::size_t c) const {
  return checked().data.at(r * cols() + c);
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

bool Tensor::has_grad() const {
  const auto& n = checked();
  return n.grad.size() == n.data.size();
}

std::span<const double> Tensor::grad() const {
  auto& n = checked();
  return n.ensure_grad();
}

std::span<double> Tensor::mutable_grad() { return checked().ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = checked();
  n.grad.assign(n.data.size(), 0.0);
}

void Tensor::backward() {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(root.shape));
  }
  if (root.backward_done) {
    throw ContractError("backward() already called on this graph");
  }
  root.backward_done = true;
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order with parents first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.backward_fn) continue;  // leaf
    node.ensure_grad();
    node.backward_fn(node);
  }
}

Tensor Tensor::detach() const {
  const auto& n = checked();
  return from(n.shape, n.data, false);
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace tqd
