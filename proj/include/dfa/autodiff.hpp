#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/nn.hpp"
#include "dfa/tensor.hpp"

// Minimal reverse-mode tape. Graphs are built eagerly per step and discarded
// after backward(); nodes only hold shared_ptrs to parents, so the graph is a
// DAG and frees itself when the root goes out of scope.
namespace dfa::ad {

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated by backward()
  bool requires_grad = false;
  std::vector<Value> parents;
  std::function<void(Node&)> backprop;  // accumulates self.grad into parents
};

inline Value leaf(Tensor t, bool requires_grad = true) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = requires_grad;
  return n;
}

inline Value constant(Tensor t) { return leaf(std::move(t), false); }

inline double scalar_value(const Value& v) {
  if (v->val.size() != 1) throw DimensionError("scalar_value: not a scalar");
  return v->val[0];
}

namespace detail {

inline Value make_op(Tensor out, std::vector<Value> parents,
                     std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(out);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural ops.
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
  check_same_shape(a->val, b->val, "ad::add");
  return detail::make_op(a->val + b->val, {a, b}, [](Node& self) {
    for (int i = 0; i < 2; ++i)
      if (self.parents[i]->requires_grad) axpy(1.0, self.grad, self.parents[i]->grad);
  });
}

// a*x + b*y with constant coefficients; the convex-combination op.
inline Value lincomb(double a, const Value& x, double b, const Value& y) {
  check_same_shape(x->val, y->val, "ad::lincomb");
  return detail::make_op(dfa::lincomb(a, x->val, b, y->val), {x, y}, [a, b](Node& self) {
    if (self.parents[0]->requires_grad) axpy(a, self.grad, self.parents[0]->grad);
    if (self.parents[1]->requires_grad) axpy(b, self.grad, self.parents[1]->grad);
  });
}

inline Value scale(const Value& x, double c) {
  Tensor out(x->val.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x->val[i];
  return detail::make_op(std::move(out), {x}, [c](Node& self) {
    if (self.parents[0]->requires_grad) axpy(c, self.grad, self.parents[0]->grad);
  });
}

// x + c where c carries no gradient (noise injection).
inline Value add_constant(const Value& x, const Tensor& c) {
  check_same_shape(x->val, c, "ad::add_constant");
  return detail::make_op(x->val + c, {x}, [](Node& self) {
    if (self.parents[0]->requires_grad) axpy(1.0, self.grad, self.parents[0]->grad);
  });
}

inline Value reshape(const Value& x, std::vector<std::size_t> shape) {
  return detail::make_op(x->val.reshaped(std::move(shape)), {x}, [](Node& self) {
    if (self.parents[0]->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        self.parents[0]->grad[i] += self.grad[i];
  });
}

// Gather along the first (batch) dimension: out[i] = x[perm[i]].
inline Value gather_rows(const Value& x, std::vector<std::size_t> perm) {
  const std::size_t B = x->val.dim(0);
  const std::size_t stride = x->val.size() / B;
  std::vector<std::size_t> shape = x->val.shape();
  shape[0] = perm.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= B) throw DimensionError("gather_rows: index out of range");
    std::copy_n(x->val.data() + perm[i] * stride, stride, out.data() + i * stride);
  }
  return detail::make_op(std::move(out), {x}, [perm, stride](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < stride; ++j)
        self.parents[0]->grad[perm[i] * stride + j] += self.grad[i * stride + j];
  });
}

// ---------------------------------------------------------------------------
// Network layers.
// ---------------------------------------------------------------------------

inline Value conv2d(const Value& x, const Value& w, const Value& b, std::size_t pad) {
  return detail::make_op(nn::conv2d_forward(x->val, w->val, b->val, pad), {x, w, b},
                         [pad](Node& self) {
                           Node& nx = *self.parents[0];
                           Node& nw = *self.parents[1];
                           Node& nb = *self.parents[2];
                           nn::conv2d_backward(nx.val, nw.val, pad, self.grad,
                                               nx.requires_grad ? &nx.grad : nullptr,
                                               nw.requires_grad ? &nw.grad : nullptr,
                                               nb.requires_grad ? &nb.grad : nullptr);
                         });
}

inline Value avgpool2(const Value& x) {
  return detail::make_op(nn::avgpool2_forward(x->val), {x}, [](Node& self) {
    if (self.parents[0]->requires_grad) nn::avgpool2_backward(self.grad, self.parents[0]->grad);
  });
}

inline Value dense(const Value& x, const Value& w, const Value& b) {
  return detail::make_op(nn::dense_forward(x->val, w->val, b->val), {x, w, b}, [](Node& self) {
    Node& nx = *self.parents[0];
    Node& nw = *self.parents[1];
    Node& nb = *self.parents[2];
    nn::dense_backward(nx.val, nw.val, self.grad, nx.requires_grad ? &nx.grad : nullptr,
                       nw.requires_grad ? &nw.grad : nullptr,
                       nb.requires_grad ? &nb.grad : nullptr);
  });
}

inline Value relu(const Value& x) {
  return detail::make_op(nn::relu_forward(x->val), {x}, [](Node& self) {
    Node& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (nx.val[i] > 0.0) nx.grad[i] += self.grad[i];
  });
}

inline Value tanh(const Value& x) {
  Tensor out = nn::tanh_forward(x->val);
  return detail::make_op(out, {x}, [out](Node& self) {
    Node& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      nx.grad[i] += self.grad[i] * (1.0 - out[i] * out[i]);
  });
}

// Project rows onto the sphere of the given radius.
inline Value normalize_rows(const Value& x, double radius, double eps) {
  return detail::make_op(nn::normalize_rows_forward(x->val, radius, eps), {x},
                         [radius, eps](Node& self) {
                           Node& nx = *self.parents[0];
                           if (nx.requires_grad)
                             nn::normalize_rows_backward(nx.val, radius, eps, self.grad, nx.grad);
                         });
}

// Cosine scores of embedding rows against the fixed (frozen) head matrix.
inline Value cosine_scores(const Value& v, const Tensor& head_weights, double eps) {
  Tensor w = head_weights;
  return detail::make_op(nn::cosine_forward(v->val, w, eps), {v}, [w, eps](Node& self) {
    Node& nv = *self.parents[0];
    if (nv.requires_grad) nn::cosine_backward_v(nv.val, w, eps, self.grad, nv.grad);
  });
}

// ---------------------------------------------------------------------------
// Loss reductions (all return scalars).
// ---------------------------------------------------------------------------

// Batch-mean cross-entropy between constant target rows and score logits.
// Target rows must be probability vectors.
inline Value ce_with_logits_mean(const Value& scores, const Tensor& targets) {
  check_same_shape(scores->val, targets, "ce_with_logits_mean");
  for (std::size_t bi = 0; bi < targets.dim(0); ++bi) {
    double s = 0.0;
    for (std::size_t k = 0; k < targets.dim(1); ++k) s += targets.at2(bi, k);
    if (std::fabs(s - 1.0) > 1e-6)
      throw InputError("cross-entropy target row " + std::to_string(bi) +
                       " is not a probability vector (sum " + std::to_string(s) + ")");
  }
  Tensor t = targets;
  return detail::make_op(Tensor::scalar(nn::ce_with_logits_mean(scores->val, t)), {scores},
                         [t](Node& self) {
                           Node& ns = *self.parents[0];
                           if (ns.requires_grad)
                             nn::ce_with_logits_backward(ns.val, t, self.grad[0], ns.grad);
                         });
}

// Mean of squared entries over the whole tensor.
inline Value mse_all(const Value& x) {
  const double n = static_cast<double>(x->val.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x->val.size(); ++i) s += x->val[i] * x->val[i];
  return detail::make_op(Tensor::scalar(s / n), {x}, [n](Node& self) {
    Node& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    const double c = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < nx.val.size(); ++i) nx.grad[i] += c * nx.val[i];
  });
}

// Batch mean of sqrt(||row||_2); the literal integrand of the aggregation
// objective. Gradient is 0 at an exactly-zero row (the kink).
inline Value sqrt_norm_rows_mean(const Value& x) {
  if (x->val.rank() != 2) throw DimensionError("sqrt_norm_rows_mean: expects rank-2");
  const std::size_t B = x->val.dim(0), D = x->val.dim(1);
  double total = 0.0;
  for (std::size_t bi = 0; bi < B; ++bi) {
    double ssq = 0.0;
    for (std::size_t d = 0; d < D; ++d) ssq += x->val.at2(bi, d) * x->val.at2(bi, d);
    total += std::pow(ssq, 0.25);
  }
  return detail::make_op(Tensor::scalar(total / static_cast<double>(B)), {x}, [B, D](Node& self) {
    Node& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    const double g = self.grad[0] / static_cast<double>(B);
    for (std::size_t bi = 0; bi < B; ++bi) {
      double ssq = 0.0;
      for (std::size_t d = 0; d < D; ++d) ssq += nx.val.at2(bi, d) * nx.val.at2(bi, d);
      if (ssq <= 1e-300) continue;
      const double c = g * 0.5 * std::pow(ssq, -0.75);
      for (std::size_t d = 0; d < D; ++d) nx.grad.at2(bi, d) += c * nx.val.at2(bi, d);
    }
  });
}

// Sum over all entries of (x - x0)^2 against a constant reference.
inline Value l2sq_diff_sum(const Value& x, const Tensor& x0) {
  check_same_shape(x->val, x0, "l2sq_diff_sum");
  Tensor ref = x0;
  double s = 0.0;
  for (std::size_t i = 0; i < x->val.size(); ++i) {
    const double d = x->val[i] - ref[i];
    s += d * d;
  }
  return detail::make_op(Tensor::scalar(s), {x}, [ref](Node& self) {
    Node& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < nx.val.size(); ++i)
      nx.grad[i] += g * 2.0 * (nx.val[i] - ref[i]);
  });
}

// Sum over rows of max(z_label - max_{k != label} z_k, -kappa): the margin
// objective attacks minimize to push samples across the decision boundary.
inline Value margin_sum(const Value& scores, const std::vector<int>& labels, double kappa) {
  const std::size_t B = scores->val.dim(0), n = scores->val.dim(1);
  if (labels.size() != B) throw DimensionError("margin_sum: label count mismatch");
  double total = 0.0;
  for (std::size_t bi = 0; bi < B; ++bi) {
    const int y = labels[bi];
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (static_cast<int>(k) != y) other = std::max(other, scores->val.at2(bi, k));
    total += std::max(scores->val.at2(bi, static_cast<std::size_t>(y)) - other, -kappa);
  }
  std::vector<int> ls = labels;
  return detail::make_op(Tensor::scalar(total), {scores}, [ls, kappa, n](Node& self) {
    Node& nsc = *self.parents[0];
    if (!nsc.requires_grad) return;
    const double g = self.grad[0];
    for (std::size_t bi = 0; bi < ls.size(); ++bi) {
      const int y = ls[bi];
      std::size_t best = (y == 0) ? 1 : 0;
      for (std::size_t k = 0; k < n; ++k)
        if (static_cast<int>(k) != y && nsc.val.at2(bi, k) > nsc.val.at2(bi, best))
          best = k;
      const double m = nsc.val.at2(bi, static_cast<std::size_t>(y)) - nsc.val.at2(bi, best);
      if (m > -kappa) {
        nsc.grad.at2(bi, static_cast<std::size_t>(y)) += g;
        nsc.grad.at2(bi, best) -= g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reverse pass.
// ---------------------------------------------------------------------------

inline void backward(const Value& root) {
  if (root->val.size() != 1) throw DimensionError("backward: root must be scalar");
  if (!root->val.all_finite()) throw NumericError("backward: non-finite loss");

  // Topological order over grad-requiring nodes (iterative post-order DFS).
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (root->requires_grad) stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    const std::size_t top = stack.size() - 1;
    Node* node = stack[top].first;
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    bool descended = false;
    while (stack[top].second < node->parents.size()) {
      Node* p = node->parents[stack[top].second++].get();
      if (p->requires_grad && !done.count(p)) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (descended) continue;
    done.insert(node);
    order.push_back(node);
    stack.pop_back();
  }

  for (Node* n : order) n->grad = Tensor(n->val.shape());
  if (root->requires_grad) root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace dfa::ad
