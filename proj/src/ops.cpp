#include "vidqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

using detail::TensorNode;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kCrossEntropyClamp = 1e-12;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void check_rank2(const Tensor& a, const char* op) {
  if (a.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(a.shape()));
}

// c[m x n] += a[m x k] * b[k x n]
void mm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void softmax_fill(const double* x, double* y, std::size_t n, double temperature) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp((x[i] - mx) / temperature);
    total += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= total;
}

// dx_i += (g_i - sum_j g_j y_j) * y_i / temperature
void softmax_backprop_row(const double* y, const double* g, double* dx,
                          std::size_t n, double temperature) {
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) dx[i] += (g[i] - dot) * y[i] / temperature;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * bn->value[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] += self.grad[i] * an->value[i];
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an, c](TensorNode& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    throw ShapeError("scale_by: scale must be a scalar, got " + shape_str(s.shape()));
  double sv = s.value()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
  TensorNode* an = a.node();
  TensorNode* sn = s.node();
  return Tensor::make(a.shape(), std::move(out), {a, s}, [an, sn, sv](TensorNode& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * sv;
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * an->value[i];
      sn->grad[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& m, const Tensor& v) {
  check_rank2(m, "add_bias");
  if (v.ndim() != 1 || v.dim(0) != m.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(v.shape()) +
                     " does not match matrix " + shape_str(m.shape()));
  std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.value()[i * c + j] + v.value()[j];
  TensorNode* mn = m.node();
  TensorNode* vn = v.node();
  return Tensor::make(m.shape(), std::move(out), {m, v}, [mn, vn, r, c](TensorNode& self) {
    if (mn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) mn->grad[i] += self.grad[i];
    if (vn->requires_grad)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) vn->grad[j] += self.grad[i * c + j];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  mm_nn_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return Tensor::make({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
    if (an->requires_grad)
      mm_nt_acc(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    if (bn->requires_grad)
      mm_tn_acc(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  TensorNode* an = a.node();
  return Tensor::make({c, r}, std::move(out), {a}, [an, r, c](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
  });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
  check_rank2(a, "gather_rows");
  std::size_t c = a.dim(1);
  for (std::size_t r : idx)
    if (r >= a.dim(0))
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_str(a.shape()));
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(a.value().data() + idx[i] * c, c, out.data() + i * c);
  TensorNode* an = a.node();
  auto indices = std::make_shared<std::vector<std::size_t>>(std::move(idx));
  std::size_t n = indices->size();
  return Tensor::make({n, c}, std::move(out), {a}, [an, indices, c](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < indices->size(); ++i) {
      double* dst = an->grad.data() + (*indices)[i] * c;
      const double* src = self.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  check_rank2(a, "slice_rows");
  if (r0 > r1 || r1 > a.dim(0))
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") invalid for " + shape_str(a.shape()));
  std::size_t c = a.dim(1), n = r1 - r0;
  std::vector<double> out(n * c);
  std::copy_n(a.value().data() + r0 * c, n * c, out.data());
  TensorNode* an = a.node();
  return Tensor::make({n, c}, std::move(out), {a}, [an, r0, c](TensorNode& self) {
    if (!an->requires_grad) return;
    double* dst = an->grad.data() + r0 * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  check_rank2(a, "slice_cols");
  if (c0 > c1 || c1 > a.dim(1))
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " + shape_str(a.shape()));
  std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.value().data() + i * c + c0, w, out.data() + i * w);
  TensorNode* an = a.node();
  return Tensor::make({r, w}, std::move(out), {a}, [an, r, c, c0, w](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i) {
      double* dst = an->grad.data() + i * c + c0;
      const double* src = self.grad.data() + i * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<TensorNode*> nodes;
  std::vector<std::size_t> row_counts;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    row_counts.push_back(p.rows());
  }
  return Tensor::make(
      {total, c}, std::move(out), parts,
      [nodes, row_counts, c](TensorNode& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          std::size_t len = row_counts[k] * c;
          if (nodes[k]->requires_grad) {
            const double* src = self.grad.data() + offset;
            for (std::size_t i = 0; i < len; ++i) nodes[k]->grad[i] += src[i];
          }
          offset += len;
        }
      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  check_rank2(parts[0], "concat_cols");
  std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_cols");
    if (p.dim(0) != r)
      throw ShapeError("concat_cols: row mismatch: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  std::size_t col_off = 0;
  for (const Tensor& p : parts) {
    std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.value().data() + i * w, w, out.data() + i * total + col_off);
    col_off += w;
  }
  std::vector<TensorNode*> nodes;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  return Tensor::make(
      {r, total}, std::move(out), parts,
      [nodes, widths, r, total](TensorNode& self) {
        std::size_t col_off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          std::size_t w = widths[k];
          if (nodes[k]->requires_grad) {
            for (std::size_t i = 0; i < r; ++i) {
              const double* src = self.grad.data() + i * total + col_off;
              double* dst = nodes[k]->grad.data() + i * w;
              for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
          col_off += w;
        }
      });
}

Tensor as_row(const Tensor& v) {
  if (v.ndim() != 1)
    throw ShapeError("as_row: expected rank-1 tensor, got " + shape_str(v.shape()));
  std::vector<double> out(v.value());
  TensorNode* vn = v.node();
  return Tensor::make({1, v.dim(0)}, std::move(out), {v}, [vn](TensorNode& self) {
    if (!vn->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) vn->grad[i] += self.grad[i];
  });
}

Tensor row_vector(const Tensor& a, std::size_t r) {
  check_rank2(a, "row_vector");
  if (r >= a.dim(0))
    throw ShapeError("row_vector: row " + std::to_string(r) + " out of range for " +
                     shape_str(a.shape()));
  std::size_t c = a.dim(1);
  std::vector<double> out(a.value().begin() + r * c, a.value().begin() + (r + 1) * c);
  TensorNode* an = a.node();
  return Tensor::make({c}, std::move(out), {a}, [an, r, c](TensorNode& self) {
    if (!an->requires_grad) return;
    double* dst = an->grad.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += self.grad[j];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  TensorNode* an = a.node();
  return Tensor::make({1}, {total}, {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    double g = self.grad[0];
    for (double& d : an->grad) d += g;
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  double inv = 1.0 / static_cast<double>(a.size());
  TensorNode* an = a.node();
  return Tensor::make({1}, {total * inv}, {a}, [an, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    double g = self.grad[0] * inv;
    for (double& d : an->grad) d += g;
  });
}

Tensor mean_rows(const Tensor& a) {
  check_rank2(a, "mean_rows");
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value()[i * c + j];
  double inv = 1.0 / static_cast<double>(r);
  for (double& v : out) v *= inv;
  TensorNode* an = a.node();
  return Tensor::make({1, c}, std::move(out), {a}, [an, r, c, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j] * inv;
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double x = an->value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      an->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      an->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor exp_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * self.value[i];
  });
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] / an->value[i];
  });
}

Tensor softmax(const Tensor& logits, double temperature) {
  if (logits.ndim() != 1)
    throw ShapeError("softmax: expected rank-1 logits, got " + shape_str(logits.shape()));
  if (!(temperature > 0.0))
    throw std::domain_error("softmax: temperature must be positive, got " +
                            std::to_string(temperature));
  std::size_t n = logits.dim(0);
  std::vector<double> out(n);
  softmax_fill(logits.value().data(), out.data(), n, temperature);
  TensorNode* an = logits.node();
  return Tensor::make({n}, std::move(out), {logits}, [an, n, temperature](TensorNode& self) {
    if (!an->requires_grad) return;
    softmax_backprop_row(self.value.data(), self.grad.data(), an->grad.data(), n,
                         temperature);
  });
}

Tensor softmax_rows(const Tensor& a, double temperature) {
  check_rank2(a, "softmax_rows");
  if (!(temperature > 0.0))
    throw std::domain_error("softmax_rows: temperature must be positive, got " +
                            std::to_string(temperature));
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    softmax_fill(a.value().data() + i * c, out.data() + i * c, c, temperature);
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an, r, c, temperature](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      softmax_backprop_row(self.value.data() + i * c, self.grad.data() + i * c,
                           an->grad.data() + i * c, c, temperature);
  });
}

Tensor l2_normalize_rows(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double v = a.value()[i * c + j];
      sq += v * v;
    }
    double nrm = std::sqrt(sq);
    if (nrm == 0.0)
      throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    norms[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.value()[i * c + j] / nrm;
  }
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a},
                      [an, r, c, norms](TensorNode& self) {
                        if (!an->requires_grad) return;
                        for (std::size_t i = 0; i < r; ++i) {
                          const double* y = self.value.data() + i * c;
                          const double* g = self.grad.data() + i * c;
                          double* dx = an->grad.data() + i * c;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                          for (std::size_t j = 0; j < c; ++j)
                            dx[j] += (g[j] - y[j] * dot) / norms[i];
                        }
                      });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  std::size_t r = x.rows(), c = x.cols();
  if (gain.ndim() != 1 || gain.dim(0) != c || bias.ndim() != 1 || bias.dim(0) != c)
    throw ShapeError("layer_norm_rows: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match input " +
                     shape_str(x.shape()));
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.value().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      double h = (xr[j] - mu) * inv;
      xhat[i * c + j] = h;
      out[i * c + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  TensorNode* xn = x.node();
  TensorNode* gn = gain.node();
  TensorNode* bn = bias.node();
  auto cache = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>(
      std::move(xhat), std::move(inv_std));
  return Tensor::make(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, r, c, cache](TensorNode& self) {
        const std::vector<double>& xh = cache->first;
        const std::vector<double>& inv = cache->second;
        for (std::size_t i = 0; i < r; ++i) {
          const double* g = self.grad.data() + i * c;
          const double* h = xh.data() + i * c;
          if (gn->requires_grad)
            for (std::size_t j = 0; j < c; ++j) gn->grad[j] += g[j] * h[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < c; ++j) bn->grad[j] += g[j];
          if (xn->requires_grad) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              double dh = g[j] * gn->value[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= static_cast<double>(c);
            mean_dh_h /= static_cast<double>(c);
            double* dx = xn->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) {
              double dh = g[j] * gn->value[j];
              dx[j] += (dh - mean_dh - h[j] * mean_dh_h) * inv[i];
            }
          }
        }
      });
}

Tensor dropout(const Tensor& a, double rate, RngStream& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " +
                                std::to_string(rate));
  if (!training || rate == 0.0) return a;
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.size());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double m = rng.uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = a.value()[i] * m;
  }
  TensorNode* an = a.node();
  return Tensor::make(a.shape(), std::move(out), {a}, [an, mask](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor soft_cross_entropy(const Tensor& target, const Tensor& predicted) {
  
  if (target.ndim() != 1 || predicted.ndim() != 1 || target.shape() != predicted.shape())
    throw ShapeError("soft_cross_entropy: distributions disagree: " +
                     shape_str(target.shape()) + " vs " + shape_str(predicted.shape()));
  double tsum = 0.0, psum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    double t = target.value()[i], p = predicted.value()[i];
    if (t < 0.0 || p < 0.0)
      throw std::invalid_argument("soft_cross_entropy: negative probability mass");
    tsum += t;
    psum += p;
  }
  if (std::abs(tsum - 1.0) > 1e-6 || std::abs(psum - 1.0) > 1e-6)
    throw std::invalid_argument(
        "soft_cross_entropy: inputs must sum to 1 (got " + std::to_string(tsum) +
        " and " + std::to_string(psum) + ")");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    loss -= target.value()[i] * std::log(std::max(predicted.value()[i], kCrossEntropyClamp));
  TensorNode* tn = target.node();
  TensorNode* pn = predicted.node();
  return Tensor::make({1}, {loss}, {target, predicted}, [tn, pn](TensorNode& self) {
    double g = self.grad[0];
    for (std::size_t i = 0; i < tn->value.size(); ++i) {
      double p = pn->value[i];
      if (tn->requires_grad) tn->grad[i] -= std::log(std::max(p, kCrossEntropyClamp)) * g;
      if (pn->requires_grad && p > kCrossEntropyClamp) pn->grad[i] -= tn->value[i] / p * g;
    }
  });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  check_rank2(table, "embed_rows");
  std::size_t v = table.dim(0), c = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ShapeError("embed_rows: id " + std::to_string(id) +
                       " out of range for table " + shape_str(table.shape()));
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * c, c,
                out.data() + i * c);
  TensorNode* tn = table.node();
  auto idx = std::make_shared<std::vector<int>>(ids);
  std::size_t n = ids.size();
  return Tensor::make({n, c}, std::move(out), {table}, [tn, idx, c](TensorNode& self) {
    if (!tn->requires_grad) return;
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* dst = tn->grad.data() + static_cast<std::size_t>((*idx)[i]) * c;
      const double* src = self.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

bool all_finite(const Tensor& t) {
  for (double v : t.value())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace vidqa
