#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rndiff/rng.hpp"

namespace rndiff {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Node of a single-use reverse-mode tape. Interior nodes hold a backward
/// rule that scatters this node's gradient into its parents; leaves with
/// requires_grad keep their gradient after backward() (accumulating across
/// calls until zero_grad). The tape is freed as backward() consumes it.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, kept only for grad-requiring leaves
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return values.size(); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
Tensor make_tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

// Elementwise with numpy-style right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

/// (m,k)x(k,n), batched (b,m,k)x(b,k,n), or mixed (b,m,k)x(k,n) where the
/// right operand is shared across the batch (its gradient sums over it).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);  // one dim may be -1
Tensor permute(const Tensor& a, std::vector<int> perm);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor broadcast_to(const Tensor& a, Shape shape);

Tensor sum_axes(const Tensor& a, std::vector<int> axes);   // removes the axes
Tensor mean_axes(const Tensor& a, std::vector<int> axes);
Tensor sum_all(const Tensor& a);    // shape {1}
Tensor mean_all(const Tensor& a);

/// Normalizes the last axis to mean 0 / population sd 1 (with eps inside the
/// square root), then applies the affine pair gamma/beta of that axis length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Exact erf-based gelu: 0.5 x (1 + erf(x/sqrt(2))).
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

/// Rows of `table` (V,D) gathered by index; gradient scatter-adds rows.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

/// Inverted dropout: keeps with probability 1-p, scales kept values by
/// 1/(1-p). p = 0 returns the input tensor itself (exact identity).
Tensor dropout(const Tensor& a, double p, SplitMix64& rng);

// Losses (scalar outputs, shape {1}).
Tensor mse_loss(const Tensor& pred, const Tensor& target);
/// Fused stable softmax + NLL, mean over rows; gradient is
/// (softmax - one_hot)/batch.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);
/// Normalized-temperature cross entropy over 2B row embeddings arranged as
/// positive pairs (2k, 2k+1): cosine similarities, self-pairs excluded,
/// averaged over all 2B anchors. Errors on a zero-norm row.
Tensor nt_xent_loss(const Tensor& embeddings, double temperature);
Tensor bce_with_logits_loss(const Tensor& logits, const std::vector<double>& targets);

/// Reverse topological sweep from a scalar loss. Gradients accumulate into
/// grad-requiring leaves (call zero_grad between steps); the interior tape
/// is released as it is consumed, so each graph supports one backward.
void backward(const Tensor& loss);
void zero_grad(const std::vector<Tensor>& params);

}  // namespace rndiff
