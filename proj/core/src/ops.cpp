#include "evomoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "evomoe/error.hpp"
#include "gemm.hpp"

namespace evomoe {

namespace {

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + to_string(t.shape()));
  }
}

// Grad buffer of input `i` when it participates in differentiation.
std::vector<double>* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

const std::vector<double>& input_data(const Node& self, std::size_t i) { return self.inputs[i]->data; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    const auto& g = self.grad;
    if (auto* ga = input_grad(self, 0)) {
      kernels::gemm_nt(g.data(), input_data(self, 1).data(), ga->data(), m, n, k, true);
    }
    if (auto* gb = input_grad(self, 1)) {
      kernels::gemm_tn(input_data(self, 0).data(), g.data(), gb->data(), m, k, n, true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto* gi = input_grad(self, s)) {
        for (std::size_t i = 0; i < gi->size(); ++i) (*gi)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& av = input_data(self, 0);
    const auto& bv = input_data(self, 1);
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, "scale", [factor](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not fit rows of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<double> out(x.size());
  const auto xv = x.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias", [rows, n](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[r * n + j];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, "relu", [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      const auto& xv = input_data(self, 0);
      for (std::size_t i = 0; i < gx->size(); ++i)
        if (xv[i] > 0.0) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return make_result(x.shape(), std::move(out), {x}, "gelu", [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      const auto& xv = input_data(self, 0);
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*gx)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::kGelu ? gelu(x) : relu(x);
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, "sum", [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (auto& g : *gx) g += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor weighted_sum(const Tensor& x, std::span<const double> coef) {
  if (coef.size() != x.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(coef.size()) +
                         " coefficients for tensor " + to_string(x.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < coef.size(); ++i) total += x.data()[i] * coef[i];
  return make_result({1}, {total}, {x}, "weighted_sum",
                     [c = std::vector<double>(coef.begin(), coef.end())](Node& self) {
                       if (auto* gx = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < c.size(); ++i) (*gx)[i] += self.grad[0] * c[i];
                       }
                     });
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("softmax temperature must be positive and finite, got " +
                         std::to_string(tau));
  }
  const std::size_t n = logits.cols();
  const std::size_t rows = logits.rows();
  std::vector<double> out(logits.size());
  const auto xv = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp((row[j] - mx) / tau);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  auto probs = out;
  return make_result(logits.shape(), std::move(out), {logits}, "softmax_temp",
                     [rows, n, tau, p = std::move(probs)](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = p.data() + r * n;
                         const double* dy = self.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j)
                           (*gx)[r * n + j] += y[j] * (dy[j] - dot) / tau;
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm needs at least 2 features, got " + to_string(x.shape()));
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: affine params " + to_string(gain.shape()) + "/" +
                         to_string(bias.shape()) + " for input " + to_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  const auto xv = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = g[j] * h + b[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = input_data(self, 1);
        auto* gx = input_grad(self, 0);
        auto* gg = input_grad(self, 1);
        auto* gb = input_grad(self, 2);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (gg || gb) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) (*gg)[j] += dy[j] * h[j];
              if (gb) (*gb)[j] += dy[j];
            }
          }
          if (!gx) continue;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[j] * gv[j];
            (*gx)[r * d + j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     double label_smoothing) {
  const std::size_t v = logits.cols();
  const std::size_t rows = logits.rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  }
  if (rows == 0) throw DimensionError("cross_entropy over an empty batch");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ParameterError("label smoothing must lie in [0, 1)");
  }
  std::vector<double> probs(logits.size());
  const auto xv = logits.data();
  const double off = label_smoothing / static_cast<double>(v);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw ParameterError("cross_entropy: target id " + std::to_string(t) + " outside vocab " +
                           std::to_string(v));
    }
    const double* row = xv.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    double row_loss = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double logp = row[j] - log_z;
      probs[r * v + j] = std::exp(logp);
      const double q = (j == static_cast<std::size_t>(t) ? 1.0 - label_smoothing : 0.0) + off;
      if (q > 0.0) row_loss -= q * logp;
    }
    total += row_loss;
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return make_result({1}, {total * inv_rows}, {logits}, "cross_entropy",
                     [rows, v, inv_rows, off, label_smoothing, p = std::move(probs),
                      t = std::vector<std::int32_t>(targets.begin(), targets.end())](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       const double g = self.grad[0] * inv_rows;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < v; ++j) {
                           const double q =
                               (j == static_cast<std::size_t>(t[r]) ? 1.0 - label_smoothing : 0.0) + off;
                           (*gx)[r * v + j] += g * (p[r * v + j] - q);
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape", [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ParameterError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, "embedding",
                     [d, rows = std::vector<std::int32_t>(ids.begin(), ids.end())](Node& self) {
                       auto* gt = input_grad(self, 0);
                       if (!gt) return;
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         double* dst = gt->data() + static_cast<std::size_t>(rows[i]) * d;
                         const double* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols(), rows = x.rows();
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(x.data().data() + idx[i] * d, d, out.data() + i * d);
  }
  return make_result({idx.size(), d}, std::move(out), {x}, "gather_rows",
                     [d, rows_idx = std::vector<std::size_t>(idx.begin(), idx.end())](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t i = 0; i < rows_idx.size(); ++i) {
                         double* dst = gx->data() + rows_idx[i] * d;
                         const double* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor scatter_add_rows(const std::vector<Tensor>& parts,
                        const std::vector<std::vector<std::size_t>>& idx, std::size_t rows) {
  if (parts.size() != idx.size()) throw DimensionError("scatter_add_rows: parts/index count differ");
  if (parts.empty()) throw DimensionError("scatter_add_rows needs at least one part");
  const std::size_t d = parts.front().cols();
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].cols() != d || parts[p].rows() != idx[p].size()) {
      throw DimensionError("scatter_add_rows: part " + std::to_string(p) + " has shape " +
                           to_string(parts[p].shape()));
    }
    const double* src = parts[p].data().data();
    for (std::size_t r = 0; r < idx[p].size(); ++r) {
      if (idx[p][r] >= rows) throw DimensionError("scatter_add_rows: row index out of range");
      double* dst = out.data() + idx[p][r] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[r * d + j];
    }
  }
  return make_result({rows, d}, std::move(out), parts, "scatter_add_rows",
                     [d, idx](Node& self) {
                       for (std::size_t p = 0; p < idx.size(); ++p) {
                         auto* gp = input_grad(self, p);
                         if (!gp) continue;
                         for (std::size_t r = 0; r < idx[p].size(); ++r) {
                           const double* src = self.grad.data() + idx[p][r] * d;
                           for (std::size_t j = 0; j < d; ++j) (*gp)[r * d + j] += src[j];
                         }
                       }
                     });
}

Tensor gather_entries(const Tensor& x, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols) {
  if (rows.size() != cols.size()) throw DimensionError("gather_entries: index lists differ in length");
  const std::size_t n = x.cols();
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows() || cols[i] >= n) throw DimensionError("gather_entries: index out of range");
    flat[i] = rows[i] * n + cols[i];
    out[i] = x.data()[flat[i]];
  }
  return make_result({rows.size(), 1}, std::move(out), {x}, "gather_entries",
                     [flat = std::move(flat)](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t i = 0; i < flat.size(); ++i) (*gx)[flat[i]] += self.grad[i];
                     });
}

Tensor row_scale(const Tensor& x, const Tensor& w) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (w.size() != rows) {
    throw DimensionError("row_scale: " + to_string(w.shape()) + " weights for " + to_string(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] * w.data()[r];
  return make_result(x.shape(), std::move(out), {x, w}, "row_scale", [rows, d](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& wv = input_data(self, 1);
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += self.grad[r * d + j] * wv[r];
    }
    if (auto* gw = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += self.grad[r * d + j] * xv[r * d + j];
        (*gw)[r] += acc;
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t width) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  if (begin + width > n) throw DimensionError("slice_cols: range exceeds " + to_string(x.shape()));
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * n + begin, width, out.data() + r * width);
  return make_result({rows, width}, std::move(out), {x}, "slice_cols",
                     [rows, n, begin, width](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < width; ++j)
                           (*gx)[r * n + begin + j] += self.grad[r * width + j];
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i].cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[i].data().data() + r * w, w, out.data() + r * total + offsets[i]);
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  return make_result({rows, total}, std::move(out), parts, "concat_cols",
                     [rows, total, offsets, widths](Node& self) {
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         auto* gp = input_grad(self, i);
                         if (!gp) continue;
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < widths[i]; ++j)
                             (*gp)[r * widths[i] + j] += self.grad[r * total + offsets[i] + j];
                       }
                     });
}

}  // namespace evomoe
