#include "unitprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "unitprompt/error.hpp"
#include "unitprompt/kernels.hpp"

namespace unitprompt {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
std::span<double> Node::ensure_grad() {
  if (grad.size() != value->size()) grad.assign(value->size(), 0.0);
  return grad;
}
}  // namespace detail

using detail::Node;

namespace {

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

const Node& checked(const Tensor& t) {
  if (!t.defined()) throw ValueError("use of an undefined tensor");
  return *t.node();
}

// Builds an op result; records the graph edge only when some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

void require_2d(const Tensor& t, const char* op) {
  if (checked(t).shape.size() != 2) {
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (checked(a).shape != checked(b).shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_finite(std::span<const double> xs, const char* op) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf(Shape{1}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(*this).shape; }
std::size_t Tensor::numel() const { return checked(*this).value->size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() >= 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.size() >= 2 ? shape_numel(Shape(s.begin() + 1, s.end())) : s[0];
}

std::span<const double> Tensor::data() const { return *checked(*this).value; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw StateError("mutable_data on a non-leaf tensor");
  return *node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return checked(*this).inputs.empty() && !node_->backward; }

std::span<const double> Tensor::grad() const { return checked(*this).grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::alias(bool requires_grad) const {
  const Node& src = checked(*this);
  auto node = std::make_shared<Node>();
  node->shape = src.shape;
  node->value = src.value;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  const Node& src = checked(*this);
  return Tensor(make_leaf(src.shape, *src.value, requires_grad));
}

Tensor Tensor::detach() const { return alias(false); }

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  const Node& root = checked(loss);
  if (root.value->size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS over nodes that take part in differentiation.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    // Intermediate gradients are consumed exactly once.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

// ---- ops -----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data(), b.data(), out, {m, k, n}, false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (wants(A)) kernels::gemm_nt(self.grad, *B->value, A->ensure_grad(), {m, n, k}, true);
    if (wants(B)) kernels::gemm_tn(*A->value, self.grad, B->ensure_grad(), {k, m, n}, true);
  });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_bt");
  require_2d(b, "matmul_bt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_bt: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm_nt(a.data(), b.data(), out, {m, k, n}, false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (wants(A)) kernels::gemm_nn(self.grad, *B->value, A->ensure_grad(), {m, n, k}, true);
    if (wants(B)) kernels::gemm_tn(self.grad, *A->value, B->ensure_grad(), {n, m, k}, true);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (const auto& in : self.inputs) {
      if (!wants(in)) continue;
      auto g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants(self.inputs[0])) {
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.inputs[1])) {
      auto g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (wants(A)) {
      auto g = A->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*B->value)[i];
    }
    if (wants(B)) {
      auto g = B->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*A->value)[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const std::size_t n = a.cols();
  if (bias.numel() != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(a.shape()));
  }
  const std::size_t m = a.numel() / std::max<std::size_t>(n, 1);
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return make_result(a.shape(), std::move(out), {a, bias}, [m, n](Node& self) {
    if (wants(self.inputs[0])) {
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.inputs[1])) {
      auto g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& X = *self.inputs[0]->value;
    auto g = self.inputs[0]->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(X[i] * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * X[i] * X[i]);
      g[i] += self.grad[i] * (cdf + X[i] * pdf);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  const int nd = static_cast<int>(shape.size());
  const int ax = axis < 0 ? axis + nd : axis;
  if (ax < 0 || ax >= nd) {
    throw ValueError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  require_finite(x.data(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[i];
  for (int i = ax + 1; i < nd; ++i) inner *= shape[i];
  const std::size_t len = shape[ax];

  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
    }
  }
  auto result = make_result(shape, std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [outer, inner, len](Node& self) {
      const auto& y = *self.value;
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t q = 0; q < inner; ++q) {
          const std::size_t base = o * len * inner + q;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t at = base + i * inner;
            g[at] += y[at] * (self.grad[at] - dot);
          }
        }
      }
    };
  }
  return result;
}

Tensor log_softmax(const Tensor& x) {
  require_finite(x.data(), "log_softmax");
  const std::size_t n = x.cols();
  const std::size_t m = x.numel() / std::max<std::size_t>(n, 1);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n](Node& self) {
    const auto& y = *self.value;
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r * n + j] - std::exp(y[r * n + j]) * gs;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.shape().empty() ? 0 : x.shape().back();
  if (n == 0) throw ShapeError("layer_norm: zero-length normalized axis");
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                     " do not match axis of " + shape_str(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  const auto in = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<double> out(in.size());
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, [m, n, xhat, rstd](Node& self) {
    const auto& X = self.inputs[0];
    const auto& G = self.inputs[1];
    const auto& B = self.inputs[2];
    const auto& gv = *G->value;
    if (wants(G)) {
      auto g = G->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j] * (*xhat)[r * n + j];
      }
    }
    if (wants(B)) {
      auto g = B->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
      }
    }
    if (wants(X)) {
      auto g = X->ensure_grad();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < m; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = self.grad[r * n + j] * gv[j];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[r * n + j];
        }
        mean_dh *= inv_n;
        mean_dh_h *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = self.grad[r * n + j] * gv[j];
          g[r * n + j] += (*rstd)[r] * (dh - mean_dh - (*xhat)[r * n + j] * mean_dh_h);
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_2d(logits, "cross_entropy");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (targets.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] >= c) {
      throw ValueError("cross_entropy: target " + std::to_string(targets[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(c) + ")");
    }
  }
  require_finite(logits.data(), "cross_entropy");
  const auto in = logits.data();
  auto probs = std::make_shared<std::vector<double>>(in.size());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = in.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
    total += lse - row[targets[r]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result({1}, {total / static_cast<double>(b)}, {logits}, [b, c, probs, tgt](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    const double s = self.grad[0] / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = j == tgt[r] ? 1.0 : 0.0;
        g[r * c + j] += s * ((*probs)[r * c + j] - onehot);
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d(table, "embedding");
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= rows) {
      throw ValueError("embedding: id " + std::to_string(ids[t]) + " at position " + std::to_string(t) +
                       " outside table of " + std::to_string(rows) + " rows");
    }
  }
  const auto tv = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    std::copy_n(tv.data() + ids[t] * d, d, out.data() + t * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [d, idx](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t t = 0; t < idx.size(); ++t) {
      for (std::size_t j = 0; j < d; ++j) g[idx[t] * d + j] += self.grad[t * d + j];
    }
  });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_2d(top, "concat_rows");
  require_2d(bottom, "concat_rows");
  if (top.shape()[1] != bottom.shape()[1]) {
    throw ShapeError("concat_rows: column mismatch " + shape_str(top.shape()) + " vs " + shape_str(bottom.shape()));
  }
  const std::size_t split = top.numel();
  std::vector<double> out;
  out.reserve(top.numel() + bottom.numel());
  out.insert(out.end(), top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  return make_result({top.shape()[0] + bottom.shape()[0], top.shape()[1]}, std::move(out), {top, bottom},
                     [split](Node& self) {
                       if (wants(self.inputs[0])) {
                         auto g = self.inputs[0]->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (wants(self.inputs[1])) {
                         auto g = self.inputs[1]->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  if (begin > end || end > x.shape()[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_str(x.shape()));
  }
  const std::size_t d = x.shape()[1];
  std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return make_result({end - begin, d}, std::move(out), {x}, [begin, d](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor gather_cols(const Tensor& x, std::span<const std::size_t> cols) {
  const std::size_t n = x.cols();
  const std::size_t m = x.numel() / std::max<std::size_t>(n, 1);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= n) {
      throw ValueError("gather_cols: column " + std::to_string(cols[j]) + " outside " + shape_str(x.shape()));
    }
  }
  std::vector<double> out(m * cols.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) out[r * cols.size() + j] = in[r * n + cols[j]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return make_result({m, cols.size()}, std::move(out), {x}, [m, n, idx](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < idx.size(); ++j) g[r * n + idx[j]] += self.grad[r * idx.size() + j];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_2d(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t T = q.shape()[0], d = q.shape()[1];
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("causal_attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = q.data(), K = k.data(), V = v.data();
  // probs[h][t][s], s <= t; row t stores t + 1 entries.
  auto probs = std::make_shared<std::vector<double>>(heads * T * T, 0.0);
  std::vector<double> out(T * d, 0.0);
  std::vector<double> score(T);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += Q[t * d + off + j] * K[s * d + off + j];
        score[s] = dot * inv;
        mx = std::max(mx, score[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        score[s] = std::exp(score[s] - mx);
        z += score[s];
      }
      double* p = probs->data() + (h * T + t) * T;
      for (std::size_t s = 0; s <= t; ++s) {
        p[s] = score[s] / z;
        for (std::size_t j = 0; j < dh; ++j) out[t * d + off + j] += p[s] * V[s * d + off + j];
      }
    }
  }
  return make_result({T, d}, std::move(out), {q, k, v}, [T, d, heads, dh, inv, probs](Node& self) {
    const auto& Qn = self.inputs[0];
    const auto& Kn = self.inputs[1];
    const auto& Vn = self.inputs[2];
    const auto& Qv = *Qn->value;
    const auto& Kv = *Kn->value;
    const auto& Vv = *Vn->value;
    std::span<double> gq = wants(Qn) ? Qn->ensure_grad() : std::span<double>{};
    std::span<double> gk = wants(Kn) ? Kn->ensure_grad() : std::span<double>{};
    std::span<double> gv = wants(Vn) ? Vn->ensure_grad() : std::span<double>{};
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < T; ++t) {
        const double* p = probs->data() + (h * T + t) * T;
        const double* go = self.grad.data() + t * d + off;
        double dot = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dh; ++j) acc += go[j] * Vv[s * d + off + j];
          dp[s] = acc;
          dot += acc * p[s];
          if (!gv.empty()) {
            for (std::size_t j = 0; j < dh; ++j) gv[s * d + off + j] += p[s] * go[j];
          }
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = p[s] * (dp[s] - dot) * inv;
          if (!gq.empty()) {
            for (std::size_t j = 0; j < dh; ++j) gq[t * d + off + j] += ds * Kv[s * d + off + j];
          }
          if (!gk.empty()) {
            for (std::size_t j = 0; j < dh; ++j) gk[s * d + off + j] += ds * Qv[t * d + off + j];
          }
        }
      }
    }
  });
}

}  // namespace unitprompt
