#pragma once

#include <span>
#include <vector>

#include "prccf/nn/tensor.hpp"

namespace prccf::nn {

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// Adds a 1xN row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
// tanh approximation
Tensor gelu(const Tensor& a);

// Row-wise softmax. `additive_mask`, when given, is added to the logits first
// (0 keeps a position, a large negative value removes it).
Tensor softmax_rows(const Tensor& a, const Matrix* additive_mask = nullptr);

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor slice_cols(const Tensor& a, Index start, Index count);
// Tiles a 1xN row n times.
Tensor repeat_row(const Tensor& row, Index n);
// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// sum_k weights(0, k) * xs[k]; all xs share one shape, weights is 1xK.
Tensor weighted_sum(std::span<const Tensor> xs, const Tensor& weights);
// Softmax over the active entries of a 1xK row; inactive entries are exactly 0.
Tensor masked_softmax(const Tensor& w, std::span<const bool> active);

Tensor sum(const Tensor& a);
// Mean token negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor nll_loss(const Tensor& logits, std::span<const int> targets);
// Per-row NLL values, no graph.
std::vector<double> token_nll(const Matrix& logits, std::span<const int> targets);

// Additive mask from a 0/1 matrix: 1 -> 0, 0 -> -1e9.
Matrix additive_mask(const Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& keep);
// Lower-triangular additive mask of size n.
Matrix causal_additive_mask(Index n);

bool all_finite(const Matrix& m);

}  // namespace prccf::nn
