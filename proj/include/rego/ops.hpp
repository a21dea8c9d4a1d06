#pragma once

#include <cstddef>
#include <vector>

#include "rego/tensor.hpp"

// Differentiable tensor operations. Every op records a gradient rule on the
// tape when any input participates in a graph. No broadcasting beyond
// leading batch dimensions; mismatched shapes are errors.
namespace rego::ops {

// c = a.b for rank-2 operands; rank-3 operands are treated as batches with
// matching or broadcast (rank-3 x rank-2) leading dimension.
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a.b^T with a [m x k], b [n x k]; rank-2 only.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// b either matches a's shape or is a suffix of it (broadcast over leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor clamp_min(const Tensor& x, double lo);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

// Numerically stabilized by max subtraction; slices along `axis` sum to 1.
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes the last dimension; gain/bias have that dimension's extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Cross-correlation. x [B x C x H x W], kernel [OC x C x kh x kw], optional
// bias [OC] (pass a default-constructed Tensor for none).
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor transpose(const Tensor& x);  // rank-2

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// out row i = x row rows[i]; x rank-2.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

// Weighted softmax cross-entropy over rows of logits [N x K]:
//   sum_i w[t_i] * (-log p_i(t_i)) / sum_i w[t_i]
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<double>& class_weights);

// Softmax focal loss, mean over rows. alpha weighs foreground rows,
// (1 - alpha) rows whose target is `background_class`.
Tensor focal_loss(const Tensor& logits, const std::vector<std::size_t>& targets,
                  double gamma, double alpha, std::size_t background_class);

}  // namespace rego::ops
