#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evomoe/tensor.hpp"

namespace evomoe {

enum class Activation { kRelu, kGelu };

// Large finite stand-in for -inf in masked logits; keeps max-subtraction NaN-free.
inline constexpr double kMaskedLogit = -1e30;

// --- linear algebra -------------------------------------------------------

// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[rows x n] + bias[n] broadcast over rows (the only broadcast supported).
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
// Exact erf form: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum(x * coef) with coef treated as a constant.
Tensor weighted_sum(const Tensor& x, std::span<const double> coef);

// --- normalisation ----------------------------------------------------------

// Softmax over the last axis of logits / tau (max-subtracted).
Tensor softmax_temp(const Tensor& logits, double tau);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Mean token cross-entropy (natural log). `targets` has one class id per row
// of logits. With smoothing > 0 the target is (1-eps)*onehot + eps/V.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     double label_smoothing = 0.0);

// --- indexing ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
// table[V x D] rows selected by ids -> [ids.size() x D]
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
// x[rows x D] rows selected by idx -> [idx.size() x D]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
// out[rows x D] = sum_p scatter(parts[p] into rows idx[p]), accumulated in part order.
Tensor scatter_add_rows(const std::vector<Tensor>& parts,
                        const std::vector<std::vector<std::size_t>>& idx, std::size_t rows);
// out[i] = x[rows[i], cols[i]] -> [n x 1]
Tensor gather_entries(const Tensor& x, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols);
// out[r, :] = x[r, :] * w[r]; w holds one value per row.
Tensor row_scale(const Tensor& x, const Tensor& w);
// Columns [begin, begin+width) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t width);
Tensor concat_cols(const std::vector<Tensor>& parts);

}  // namespace evomoe
