#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle to a graph node. Leaves own (or alias) a value
// buffer; every op result records its inputs and a closure that pushes the
// output gradient back into them. backward() walks the recorded graph in
// reverse topological order. Gradients are only ever allocated and written for
// nodes with requires_grad set, so frozen weights stay untouched.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unitprompt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // 2-D helpers; a 1-D tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Only valid on leaves; used by optimizers and tests.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // New leaf sharing this tensor's value buffer, with its own gradient slot.
  Tensor alias(bool requires_grad = true) const;
  // New leaf holding a copy of the values.
  Tensor clone(bool requires_grad = false) const;
  // Constant view of the values, cut from the graph.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Receives this node; reads node.grad and accumulates into inputs.
  std::function<void(Node&)> backward;

  std::span<double> ensure_grad();
};

}  // namespace detail

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

// ---- operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a (m x k) * b (n x k)^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a (m x n) + bias (n), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Columns `cols` of a (m x n) tensor.
Tensor gather_cols(const Tensor& x, std::span<const std::size_t> cols);
Tensor reshape(const Tensor& x, Shape shape);
// Multi-head scaled dot-product attention with a causal mask.
// q, k, v are (T x d); d must be divisible by heads.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace unitprompt
