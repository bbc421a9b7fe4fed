#include "evomoe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "evomoe/error.hpp"

namespace evomoe {

using detail::Node;

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention expects 2-D Q, K, V");
  }
  return attention_heads(q, k, v, 1, q.rows(), k.rows(), causal);
}

Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       std::size_t q_len, std::size_t kv_len, bool causal) {
  const std::size_t dq = q.cols(), dv_total = v.cols();
  if (k.cols() != dq) {
    throw DimensionError("attention: Q " + to_string(q.shape()) + " and K " + to_string(k.shape()) +
                         " disagree on d_k");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: K " + to_string(k.shape()) + " and V " + to_string(v.shape()) +
                         " disagree on sequence length");
  }
  if (heads == 0 || dq % heads != 0 || dv_total % heads != 0) {
    throw ConfigError("attention: feature width not divisible by " + std::to_string(heads) + " heads");
  }
  if (q_len == 0 || kv_len == 0 || q.rows() % q_len != 0 || k.rows() % kv_len != 0 ||
      q.rows() / q_len != k.rows() / kv_len) {
    throw DimensionError("attention: rows do not split into whole sequences");
  }
  if (causal && q_len != kv_len) throw DimensionError("causal attention needs equal query/key lengths");

  const std::size_t batch = q.rows() / q_len;
  const std::size_t dk = dq / heads, dv = dv_total / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto qv = q.data(), kv = k.data(), vv = v.data();

  std::vector<double> probs(batch * heads * q_len * kv_len);
  std::vector<double> out(q.rows() * dv_total, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + ((b * heads + h) * q_len) * kv_len;
      for (std::size_t i = 0; i < q_len; ++i) {
        const double* qi = qv.data() + (b * q_len + i) * dq + h * dk;
        double* prow = p + i * kv_len;
        double mx = kMaskedLogit;
        for (std::size_t j = 0; j < kv_len; ++j) {
          if (causal && j > i) {
            prow[j] = kMaskedLogit;
            continue;
          }
          const double* kj = kv.data() + (b * kv_len + j) * dq + h * dk;
          double s = 0.0;
          for (std::size_t d = 0; d < dk; ++d) s += qi[d] * kj[d];
          prow[j] = s * inv_scale;
          mx = std::max(mx, prow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < kv_len; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        double* oi = out.data() + (b * q_len + i) * dv_total + h * dv;
        for (std::size_t j = 0; j < kv_len; ++j) {
          prow[j] /= z;
          const double w = prow[j];
          if (w == 0.0) continue;
          const double* vj = vv.data() + (b * kv_len + j) * dv_total + h * dv;
          for (std::size_t e = 0; e < dv; ++e) oi[e] += w * vj[e];
        }
      }
    }
  }

  return make_result(
      {q.rows(), dv_total}, std::move(out), {q, k, v}, "attention",
      [batch, heads, q_len, kv_len, dq, dk, dv, dv_total, inv_scale,
       probs = std::move(probs)](Node& self) {
        const auto& qd = self.inputs[0]->data;
        const auto& kd = self.inputs[1]->data;
        const auto& vd = self.inputs[2]->data;
        auto* gq = self.inputs[0]->requires_grad ? &self.inputs[0]->grad_buffer() : nullptr;
        auto* gk = self.inputs[1]->requires_grad ? &self.inputs[1]->grad_buffer() : nullptr;
        auto* gv = self.inputs[2]->requires_grad ? &self.inputs[2]->grad_buffer() : nullptr;
        std::vector<double> ds(kv_len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + ((b * heads + h) * q_len) * kv_len;
            for (std::size_t i = 0; i < q_len; ++i) {
              const double* prow = p + i * kv_len;
              const double* doi = self.grad.data() + (b * q_len + i) * dv_total + h * dv;
              double dot = 0.0;
              for (std::size_t j = 0; j < kv_len; ++j) {
                double dp = 0.0;
                if (prow[j] != 0.0) {
                  const double* vj = vd.data() + (b * kv_len + j) * dv_total + h * dv;
                  for (std::size_t e = 0; e < dv; ++e) dp += doi[e] * vj[e];
                }
                ds[j] = dp;
                dot += dp * prow[j];
                if (gv && prow[j] != 0.0) {
                  double* gvj = gv->data() + (b * kv_len + j) * dv_total + h * dv;
                  for (std::size_t e = 0; e < dv; ++e) gvj[e] += prow[j] * doi[e];
                }
              }
              const double* qi = qd.data() + (b * q_len + i) * dq + h * dk;
              double* gqi = gq ? gq->data() + (b * q_len + i) * dq + h * dk : nullptr;
              for (std::size_t j = 0; j < kv_len; ++j) {
                if (prow[j] == 0.0) continue;
                const double s = prow[j] * (ds[j] - dot) * inv_scale;
                const double* kj = kd.data() + (b * kv_len + j) * dq + h * dk;
                if (gqi) {
                  for (std::size_t d = 0; d < dk; ++d) gqi[d] += s * kj[d];
                }
                if (gk) {
                  double* gkj = gk->data() + (b * kv_len + j) * dq + h * dk;
                  for (std::size_t d = 0; d < dk; ++d) gkj[d] += s * qi[d];
                }
              }
            }
          }
        }
      });
}

Tensor multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv, const AttentionWeights& w,
                  std::size_t heads, std::size_t seq_len, bool causal) {
  const std::size_t d_model = xq.cols();
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Tensor q = matmul(xq, w.wq);
  const Tensor k = matmul(xk, w.wk);
  const Tensor v = matmul(xv, w.wv);
  return matmul(attention_heads(q, k, v, heads, seq_len, seq_len, causal), w.wo);
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
           Activation act) {
  return add_bias(matmul(activation(add_bias(matmul(x, w1), b1), act), w2), b2);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
    out[i] = x.data()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x}, "dropout", [mask = std::move(mask)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

}  // namespace evomoe
