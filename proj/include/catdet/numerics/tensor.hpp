#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace catdet::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One vertex of the recorded computation. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  // Allocates a zeroed gradient buffer on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major array of doubles with an optional gradient. Copies share
// storage: a Tensor is a handle, and two handles compare equal by identity.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Nested-list literal for small 2-D matrices in tests and examples.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writes bypass the graph; use for parameter updates and test setup only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone() const;

  const char* op_name() const;
  const void* identity() const { return node_.get(); }
  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

  // Extension point for operations defined outside this module.
  static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                            detail::BackwardFn backward, const char* op);
  detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default and tracked per thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; interior gradients are recomputed from scratch each time.
void backward(const Tensor& loss);

// Nodes reachable from root in the order backward() visits them.
std::vector<const detail::Node*> backward_order(const Tensor& root);

}  // namespace catdet::num
