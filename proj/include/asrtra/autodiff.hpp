#pragma once

// Dense row-major double tensors with a define-by-run reverse-mode tape.
//
// Every tensor is at most 2-D. A rank-1 tensor of length n behaves as a
// 1 x n row wherever an op needs rows/cols. Scalars are size-1 tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "asrtra/error.hpp"

namespace asrtra::ad {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLogEps = 1e-12;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first gradient arrives
  bool requires_grad = false;

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const noexcept { return shape.empty() ? 1 : shape.back(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const {
    if (data.size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data[0];
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }

  bool all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(data.begin(), data.end(), finite) &&
           std::all_of(grad.begin(), grad.end(), finite);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                             bool requires_grad = false) {
  if (shape.size() > 2) throw ShapeError("tensors are limited to rank 2");
  if (shape_size(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

inline TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
  const auto n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline TensorPtr constant(std::vector<std::size_t> shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data), false);
}

inline TensorPtr parameter(std::vector<std::size_t> shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data), true);
}

inline TensorPtr scalar(double v, bool requires_grad = false) {
  return make_tensor({1}, {v}, requires_grad);
}

/// Records primitive ops and replays their local backward rules in reverse.
///
/// A tape is single-use: `backward` may run once. Tensors that do not
/// require gradients never produce tape entries, so inference through a
/// tape costs only the forward arithmetic.
class Tape {
 public:
  Tape() = default;

  /// A tape that never records: ops compute values only.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  bool recording() const noexcept { return recording_; }

  // ---- linear algebra ----------------------------------------------------

  /// a[m x k] * b[k x n]
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    if (b->rows() != k)
      throw ShapeError("matmul: " + shape_str(a->shape) + " * " + shape_str(b->shape));
    auto out = zeros({m, n});
    gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    record(out, {a, b}, [a, b, m, k, n](Tensor& o) {
      if (a->requires_grad) {
        auto& ga = a->ensure_grad();
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double* g = &o.grad[i * n];
            const double* br = &b->data[p * n];
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[j] * br[j];
            ga[i * k + p] += s;
          }
      }
      if (b->requires_grad) {
        auto& gb = b->ensure_grad();
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a->data[i * k + p];
            const double* g = &o.grad[i * n];
            double* dst = &gb[p * n];
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * g[j];
          }
      }
    });
    return out;
  }

  /// a[m x k] * b[n x k]^T
  TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    const std::size_t m = a->rows(), k = a->cols(), n = b->rows();
    if (b->cols() != k)
      throw ShapeError("matmul_nt: " + shape_str(a->shape) + " * " + shape_str(b->shape) + "^T");
    auto out = zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* ar = &a->data[i * k];
        const double* br = &b->data[j * k];
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
        out->data[i * n + j] = s;
      }
    record(out, {a, b}, [a, b, m, k, n](Tensor& o) {
      if (a->requires_grad) {
        auto& ga = a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = o.grad[i * n + j];
            const double* br = &b->data[j * k];
            double* dst = &ga[i * k];
            for (std::size_t p = 0; p < k; ++p) dst[p] += g * br[p];
          }
      }
      if (b->requires_grad) {
        auto& gb = b->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = o.grad[i * n + j];
            const double* ar = &a->data[i * k];
            double* dst = &gb[j * k];
            for (std::size_t p = 0; p < k; ++p) dst[p] += g * ar[p];
          }
      }
    });
    return out;
  }

  // ---- elementwise -------------------------------------------------------

  TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_size("add", a, b);
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    record(out, {a, b}, [a, b](Tensor& o) {
      if (a->requires_grad) accumulate(a->ensure_grad(), o.grad, 1.0);
      if (b->requires_grad) accumulate(b->ensure_grad(), o.grad, 1.0);
    });
    return out;
  }

  TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_size("sub", a, b);
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    record(out, {a, b}, [a, b](Tensor& o) {
      if (a->requires_grad) accumulate(a->ensure_grad(), o.grad, 1.0);
      if (b->requires_grad) accumulate(b->ensure_grad(), o.grad, -1.0);
    });
    return out;
  }

  TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_size("mul", a, b);
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    record(out, {a, b}, [a, b](Tensor& o) {
      if (a->requires_grad) {
        auto& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        auto& g = b->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * a->data[i];
      }
    });
    return out;
  }

  /// x[m x n] + bias[n] broadcast over rows.
  TensorPtr add_row(const TensorPtr& x, const TensorPtr& bias) {
    const std::size_t m = x->rows(), n = x->cols();
    if (bias->size() != n)
      throw ShapeError("add_row: bias " + shape_str(bias->shape) + " vs " + shape_str(x->shape));
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + bias->data[j];
    record(out, {x, bias}, [x, bias, m, n](Tensor& o) {
      if (x->requires_grad) accumulate(x->ensure_grad(), o.grad, 1.0);
      if (bias->requires_grad) {
        auto& g = bias->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
      }
    });
    return out;
  }

  TensorPtr scale(const TensorPtr& x, double c) {
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = c * x->data[i];
    record(out, {x}, [x, c](Tensor& o) { accumulate(x->ensure_grad(), o.grad, c); });
    return out;
  }

  /// x * s for a (possibly learnable) scalar tensor s.
  TensorPtr scale_by(const TensorPtr& x, const TensorPtr& s) {
    if (s->size() != 1) throw ShapeError("scale_by: scale must be a scalar");
    const double c = s->data[0];
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = c * x->data[i];
    record(out, {x, s}, [x, s, c](Tensor& o) {
      if (x->requires_grad) accumulate(x->ensure_grad(), o.grad, c);
      if (s->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * x->data[i];
        s->ensure_grad()[0] += acc;
      }
    });
    return out;
  }

  TensorPtr exp(const TensorPtr& x) {
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = std::exp(x->data[i]);
    record(out, {x}, [x](Tensor& o) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
    });
    return out;
  }

  /// GELU, tanh approximation.
  TensorPtr gelu(const TensorPtr& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
      const double v = x->data[i];
      out->data[i] = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
    }
    record(out, {x}, [x](Tensor& o) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x->data[i];
        const double u = c * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        g[i] += o.grad[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    });
    return out;
  }

  // ---- row-wise ----------------------------------------------------------

  /// Normalizes each row to zero mean and unit variance, then applies
  /// gain and bias. Epsilon sits inside the square root.
  TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias) {
    const std::size_t m = x->rows(), n = x->cols();
    if (gain->size() != n || bias->size() != n)
      throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(n));
    auto out = zeros(x->shape);
    std::vector<double> xhat(m * n), inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = &x->data[i * n];
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += row[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(n);
      inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
      for (std::size_t j = 0; j < n; ++j) {
        xhat[i * n + j] = (row[j] - mean) * inv_std[i];
        out->data[i * n + j] = xhat[i * n + j] * gain->data[j] + bias->data[j];
      }
    }
    record(out, {x, gain, bias},
           [x, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tensor& o) {
             if (gain->requires_grad) {
               auto& g = gain->ensure_grad();
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j] * xhat[i * n + j];
             }
             if (bias->requires_grad) {
               auto& g = bias->ensure_grad();
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
             }
             if (x->requires_grad) {
               auto& gx = x->ensure_grad();
               const double inv_n = 1.0 / static_cast<double>(n);
               for (std::size_t i = 0; i < m; ++i) {
                 double sum_dy = 0.0, sum_dy_xhat = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double dy = o.grad[i * n + j] * gain->data[j];
                   sum_dy += dy;
                   sum_dy_xhat += dy * xhat[i * n + j];
                 }
                 for (std::size_t j = 0; j < n; ++j) {
                   const double dy = o.grad[i * n + j] * gain->data[j];
                   gx[i * n + j] += inv_std[i] * (dy - inv_n * sum_dy -
                                                  xhat[i * n + j] * inv_n * sum_dy_xhat);
                 }
               }
             }
           });
    return out;
  }

  /// Row softmax. With `causal_offset >= 0`, entry (i, j) is masked when
  /// j > i + causal_offset.
  TensorPtr softmax_rows(const TensorPtr& x, long causal_offset = -1) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t limit =
          causal_offset < 0 ? n
                            : std::min<std::size_t>(n, i + static_cast<std::size_t>(causal_offset) + 1);
      const double* row = &x->data[i * n];
      double* dst = &out->data[i * n];
      double mx = row[0];
      for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < limit; ++j) sum += (dst[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < limit; ++j) dst[j] /= sum;
    }
    record(out, {x}, [x, m, n](Tensor& o) {
      auto& gx = x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = &o.data[i * n];
        const double* g = &o.grad[i * n];
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
      }
    });
    return out;
  }

  /// Row log-softmax with max subtraction.
  TensorPtr log_softmax_rows(const TensorPtr& x) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = zeros(x->shape);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = &x->data[i * n];
      const double mx = *std::max_element(row, row + n);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = row[j] - lse;
    }
    record(out, {x}, [x, m, n](Tensor& o) {
      auto& gx = x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += o.grad[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += o.grad[i * n + j] - std::exp(o.data[i * n + j]) * gsum;
      }
    });
    return out;
  }

  /// Scales each row to unit L2 norm (norm stabilized by kLogEps).
  TensorPtr normalize_rows(const TensorPtr& x) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = zeros(x->shape);
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < n; ++j) ss += x->data[i * n + j] * x->data[i * n + j];
      norms[i] = std::sqrt(ss + kLogEps);
      for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] / norms[i];
    }
    record(out, {x}, [x, m, n, norms = std::move(norms)](Tensor& o) {
      auto& gx = x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * o.data[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += (o.grad[i * n + j] - o.data[i * n + j] * dot) / norms[i];
      }
    });
    return out;
  }

  /// Mean over rows: [m x n] -> [1 x n].
  TensorPtr mean_rows(const TensorPtr& x) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = zeros({1, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out->data[j] += x->data[i * n + j];
    for (auto& v : out->data) v /= static_cast<double>(m);
    record(out, {x}, [x, m, n](Tensor& o) {
      auto& gx = x->ensure_grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += o.grad[j] * inv;
    });
    return out;
  }

  // ---- reductions --------------------------------------------------------

  TensorPtr sum(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    auto out = scalar(s);
    record(out, {x}, [x](Tensor& o) {
      auto& g = x->ensure_grad();
      for (auto& v : g) v += o.grad[0];
    });
    return out;
  }

  TensorPtr mean(const TensorPtr& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x->size()));
  }

  /// Sum_i coeffs[i] * terms[i] over scalar tensors; coefficients are constants.
  TensorPtr linear_combination(const std::vector<TensorPtr>& terms, std::span<const double> coeffs) {
    if (terms.size() != coeffs.size())
      throw ShapeError("linear_combination: " + std::to_string(terms.size()) + " terms, " +
                       std::to_string(coeffs.size()) + " coefficients");
    double s = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i]->size() != 1) throw ShapeError("linear_combination: terms must be scalars");
      s += coeffs[i] * terms[i]->data[0];
    }
    auto out = scalar(s);
    std::vector<double> c(coeffs.begin(), coeffs.end());
    record(out, terms, [terms, c = std::move(c)](Tensor& o) {
      for (std::size_t i = 0; i < terms.size(); ++i)
        if (terms[i]->requires_grad) terms[i]->ensure_grad()[0] += c[i] * o.grad[0];
    });
    return out;
  }

  // ---- indexing and layout -----------------------------------------------

  /// Gathers rows of `table` by index (embedding lookup).
  TensorPtr gather_rows(const TensorPtr& table, std::span<const int> ids) {
    const std::size_t n = table->cols(), vocab = table->rows();
    auto out = zeros({ids.size(), n});
    std::vector<int> idx(ids.begin(), ids.end());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab)
        throw ShapeError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
      std::copy_n(&table->data[static_cast<std::size_t>(idx[r]) * n], n, &out->data[r * n]);
    }
    record(out, {table}, [table, n, idx = std::move(idx)](Tensor& o) {
      auto& g = table->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j)
          g[static_cast<std::size_t>(idx[r]) * n + j] += o.grad[r * n + j];
    });
    return out;
  }

  /// Picks x[rows[i], cols[i]] into a [1 x k] row.
  TensorPtr pick(const TensorPtr& x, std::span<const std::size_t> rows,
                 std::span<const std::size_t> cols) {
    if (rows.size() != cols.size()) throw ShapeError("pick: index length mismatch");
    const std::size_t n = x->cols();
    std::vector<std::size_t> flat(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= x->rows() || cols[i] >= n) throw ShapeError("pick: index out of range");
      flat[i] = rows[i] * n + cols[i];
    }
    auto out = zeros({1, flat.size()});
    for (std::size_t i = 0; i < flat.size(); ++i) out->data[i] = x->data[flat[i]];
    record(out, {x}, [x, flat = std::move(flat)](Tensor& o) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += o.grad[i];
    });
    return out;
  }

  /// Stacks 2-D tensors with equal column counts along rows.
  TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = parts.front()->cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
      if (p->cols() != n) throw ShapeError("concat_rows: column mismatch");
      m += p->rows();
    }
    auto out = zeros({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p->data.begin(), p->data.end(), out->data.begin() + static_cast<long>(off));
      off += p->size();
    }
    record(out, parts, [parts](Tensor& o) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < p->size(); ++i) g[i] += o.grad[off + i];
        }
        off += p->size();
      }
    });
    return out;
  }

  /// Columns [start, start + count) of x.
  TensorPtr slice_cols(const TensorPtr& x, std::size_t start, std::size_t count) {
    const std::size_t m = x->rows(), n = x->cols();
    if (start + count > n) throw ShapeError("slice_cols: range out of bounds");
    auto out = zeros({m, count});
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(&x->data[i * n + start], count, &out->data[i * count]);
    record(out, {x}, [x, m, n, start, count](Tensor& o) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += o.grad[i * count + j];
    });
    return out;
  }

  /// Rows [start, start + count) of x.
  TensorPtr slice_rows(const TensorPtr& x, std::size_t start, std::size_t count) {
    const std::size_t n = x->cols();
    if (start + count > x->rows()) throw ShapeError("slice_rows: range out of bounds");
    auto out = zeros({count, n});
    std::copy_n(&x->data[start * n], count * n, out->data.begin());
    record(out, {x}, [x, n, start](Tensor& o) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[start * n + i] += o.grad[i];
    });
    return out;
  }

  /// Places 2-D tensors with equal row counts side by side.
  TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts.front()->rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
      if (p->rows() != m) throw ShapeError("concat_cols: row mismatch");
      n += p->cols();
    }
    auto out = zeros({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p->cols();
      for (std::size_t i = 0; i < m; ++i) std::copy_n(&p->data[i * c], c, &out->data[i * n + off]);
      off += c;
    }
    record(out, parts, [parts, m, n](Tensor& o) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t c = p->cols();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * n + off + j];
        }
        off += c;
      }
    });
    return out;
  }

  // ---- backward ----------------------------------------------------------

  /// Propagates d(loss)/d(x) to every tensor on this tape that requires a
  /// gradient. Leaf gradients accumulate onto whatever they already hold.
  void backward(const TensorPtr& loss) {
    if (loss->size() != 1)
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss->shape));
    if (consumed_) throw StateError("backward: tape already consumed");
    consumed_ = true;
    if (!loss->requires_grad) return;
    loss->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Tensor& out = *it->output;
      if (out.grad.empty()) continue;  // nothing flowed into this node
      it->backward(out);
    }
    // Free intermediates; leaves keep their accumulated gradients.
    nodes_.clear();
  }

 private:
  struct Node {
    TensorPtr output;
    std::function<void(Tensor&)> backward;
  };

  static void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }

  static void accumulate(std::vector<double>& dst, const std::vector<double>& src, double c) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
  }

  static void require_same_size(const char* op, const TensorPtr& a, const TensorPtr& b) {
    if (a->size() != b->size() || a->cols() != b->cols())
      throw ShapeError(std::string(op) + ": " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }

  void record(const TensorPtr& out, const std::vector<TensorPtr>& inputs,
              std::function<void(Tensor&)> fn) {
    if (consumed_) throw StateError("tape already consumed");
    if (!recording_) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const TensorPtr& t) { return t->requires_grad; });
    if (!any) return;
    out->requires_grad = true;
    nodes_.push_back({out, std::move(fn)});
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool recording_ = true;
};

/// Central-difference gradient check of a scalar function of `x`.
///
/// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor).
/// The floor keeps analytically zero entries (finite-difference roundoff
/// near 1e-11) from reading as large relative errors.
/// `f` builds its graph on the tape it is given and must be deterministic.
/// `x` keeps its original values on return; its gradient is overwritten.
inline double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                         const TensorPtr& x, double step = 1e-5, double floor = 1e-6) {
  const bool had = x->requires_grad;
  x->requires_grad = true;
  x->grad.assign(x->size(), 0.0);
  {
    Tape tape;
    tape.backward(f(tape, x));
  }
  const std::vector<double> analytic = x->grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x->size(); ++i) {
    const double orig = x->data[i];
    x->data[i] = orig + step;
    Tape t1;
    const double fp = f(t1, x)->item();
    x->data[i] = orig - step;
    Tape t2;
    const double fm = f(t2, x)->item();
    x->data[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  x->requires_grad = had;
  return worst;
}

}  // namespace asrtra::ad
