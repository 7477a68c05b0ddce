#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "memdiff/tensor.hpp"

namespace memdiff {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Define-by-run tape node. Ids are monotone, so "descending id" is a valid
// topological order of any graph and backward needs no explicit sort beyond it.
struct Node {
  Tensor value;
  Tensor grad;  // empty until backward touches this node
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<NodePtr> parents;
  std::function<void(const Tensor&)> backprop;  // pushes this node's grad into parents

  bool has_grad() const { return !grad.data.empty(); }
};

// Handle type the op layer works with; cheap to copy.
struct Value {
  NodePtr n;

  Value() = default;
  explicit Value(NodePtr p) : n(std::move(p)) {}

  const Tensor& val() const { return n->value; }
  const Shape& shape() const { return n->value.shape; }
  int64_t numel() const { return n->value.numel(); }
  bool defined() const { return bool(n); }
  const Tensor& grad() const;
};

Value leaf(Tensor v, bool requires_grad);
Value constant(Tensor v);
Value detach(const Value& v);  // stop-grad: same value, no history

// Taping can be switched off (sampling, memory rollout prefixes); ops then
// produce constant nodes and keep no parents.
bool grad_enabled();
struct NoGradGuard {
  bool prev;
  NoGradGuard();
  ~NoGradGuard();
};

Value add(const Value& a, const Value& b);
Value add(const Value& a, double b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value mul(const Value& a, double b);
Value neg(const Value& a);
Value matmul(const Value& a, const Value& b);
Value reshape(const Value& a, const Shape& s);
Value permute(const Value& a, const std::vector<int>& perm);
Value transpose_last2(const Value& a);
Value concat(const std::vector<Value>& parts, int axis);
std::vector<Value> split(const Value& a, int axis, const std::vector<int64_t>& sizes);
Value slice(const Value& a, int axis, int64_t start, int64_t len);
Value softmax(const Value& a, int axis);
Value layer_norm(const Value& a);  // last axis, no affine; compose gain/bias with mul/add
Value gelu(const Value& a);
Value sum(const Value& a);   // scalar, shape (1)
Value mean(const Value& a);  // scalar, shape (1)
Value take(const Value& a, const Shape& out_shape, std::shared_ptr<std::vector<int64_t>> index);

Value mse(const Value& a, const Value& b);  // mean squared difference, scalar

// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
// requires-grad node, visiting nodes in descending id order.
void backward(const Value& loss);
void zero_grad(const std::vector<NodePtr>& params);

// Central finite differences against the taped gradient of f at x. Returns
// max over coordinates of |cd - ad| / (|ad| + 1e-8).
double finite_diff_check(const std::function<Value(const Value&)>& f, const Tensor& x,
                         double h);

// Same oracle for a loss over existing parameter leaves: ad from one taped
// backward, cd by perturbing chosen coordinates in place.
double finite_diff_check_params(const std::function<Value()>& loss_fn,
                                const std::vector<std::pair<NodePtr, int64_t>>& coords,
                                double h);

}  // namespace memdiff
