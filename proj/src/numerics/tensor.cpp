#include "catdet/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "catdet/common/errors.hpp"

namespace catdet::num {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(v), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from({values.size()}, std::vector<double>(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw DimensionError("dim index out of range");
  return shape()[i];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= shape()[k]) throw DimensionError("index out of range");
    flat = flat * shape()[k] + i;
    ++k;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad()); }

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                           detail::BackwardFn backward, const char* op) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& t : inputs) n->parents.push_back(t.node_);
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

namespace {

// Post-order DFS over requires_grad nodes; iterative to survive deep graphs.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace

std::vector<const detail::Node*> backward_order(const Tensor& root) {
  std::vector<const detail::Node*> out;
  if (!root.requires_grad()) return out;
  for (auto* n : topo_order(&root.node())) out.push_back(n);
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any parameter");
  auto order = topo_order(&loss.node());
  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node().grad_buffer()[0] += 1.0;
  for (auto* n : order) {
    if (n->is_leaf()) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->grad_buffer();
    }
    n->backward(*n);
  }
}

}  // namespace catdet::num
