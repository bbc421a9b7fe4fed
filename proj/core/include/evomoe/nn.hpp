#pragma once

#include <cstddef>

#include "evomoe/ops.hpp"
#include "evomoe/random.hpp"
#include "evomoe/tensor.hpp"

namespace evomoe {

// Scaled dot-product attention, softmax(Q K^T / sqrt(d_k)) V, for one sequence.
// Q: [s_q x d_k], K: [s_k x d_k], V: [s_k x d_v]. Causal masking requires s_q == s_k.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

// Batched multi-head core on already-projected inputs. Rows hold `batch`
// consecutive sequences (q rows = batch*q_len, k/v rows = batch*kv_len);
// head h owns columns [h*d_k, (h+1)*d_k).
Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       std::size_t q_len, std::size_t kv_len, bool causal);

struct AttentionWeights {
  Tensor wq;  // [d_model x d_model], head i = column block i
  Tensor wk;
  Tensor wv;
  Tensor wo;  // [d_model x d_model]
};

// Multi-head attention: concat_i attention(x_q W_i^Q, x_k W_i^K, x_v W_i^V) W^O.
// Inputs are [batch*seq_len x d_model]. Throws ConfigError when d_model % heads != 0.
Tensor multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv, const AttentionWeights& w,
                  std::size_t heads, std::size_t seq_len, bool causal);

// Position-wise feed-forward: W2 . act(W1 . x + b1) + b2 (row-vector convention).
Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
           Activation act = Activation::kRelu);

// Inverted dropout: zero with probability `rate`, survivors scaled by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace evomoe
