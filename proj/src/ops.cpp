#include "tqd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "tqd/errors.hpp"

namespace tqd {
namespace {

using detail::Node;

// Gradient buffer of parent `i`, or nullptr if that parent is a constant.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " needs a rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < xin.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xin[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    const double* dC = self.grad.data();
    if (double* dA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = B + p * n;
          const double* drow = dC + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (double* dB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* drow = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* grow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    const double* dC = self.grad.data();
    double* dA = grad_of(self, 0);
    double* dB = grad_of(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = dC[i * n + j];
        if (d == 0.0) continue;
        if (dA) {
          for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += d * B[j * k + p];
        }
        if (dB) {
          for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += d * A[i * k + p];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  }
  const auto in = x.data(), b = bias.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = in[i * n + j] + b[j];
  }
  return make_result({m, n}, std::move(out), {x, bias}, [m, n](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const auto in = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
  return make_result({n, m}, std::move(out), {x}, [m, n](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  }
  return make_result(std::move(shape), x.to_vector(), {x}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2(p, "concat");
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = axis == 0 ? p.cols() : p.rows();
    if (f != fixed) {
      throw DimensionError("concat: incompatible shapes " +
                           shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()));
    }
    extents.push_back(axis == 0 ? p.rows() : p.cols());
    total += extents.back();
  }
  const std::size_t m = axis == 0 ? total : fixed;
  const std::size_t n = axis == 0 ? fixed : total;
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    const std::size_t pr = parts[k].rows(), pc = parts[k].cols();
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? i + offset : i;
        const std::size_t c = axis == 0 ? j : j + offset;
        out[r * n + c] = in[i * pc + j];
      }
    }
    offset += extents[k];
  }
  return make_result({m, n}, std::move(out), parts,
                     [axis, n, extents](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         const auto& ps = self.parents[k]->shape;
                         const std::size_t pr = ps[0], pc = ps[1];
                         if (double* g = grad_of(self, k)) {
                           for (std::size_t i = 0; i < pr; ++i) {
                             for (std::size_t j = 0; j < pc; ++j) {
                               const std::size_t r = axis == 0 ? i + offset : i;
                               const std::size_t c = axis == 0 ? j : j + offset;
                               g[i * pc + j] += self.grad[r * n + c];
                             }
                           }
                         }
                         offset += extents[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  require_rank2(x, "slice");
  if (axis > 1) throw DimensionError("slice: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t extent = axis == 0 ? m : n;
  if (begin > end || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " +
                         shape_str(x.shape()));
  }
  const std::size_t om = axis == 0 ? end - begin : m;
  const std::size_t on = axis == 0 ? n : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  const auto in = x.data();
  std::vector<double> out(om * on);
  for (std::size_t i = 0; i < om; ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      out[i * on + j] = in[(i + r0) * n + (j + c0)];
    }
  }
  return make_result({om, on}, std::move(out), {x},
                     [om, on, n, r0, c0](Node& self) {
                       if (double* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < om; ++i) {
                           for (std::size_t j = 0; j < on; ++j) {
                             g[(i + r0) * n + (j + c0)] += self.grad[i * on + j];
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto in = x.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, len](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          dot += dy[base + i * inner] * y[base + i * inner];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t at = base + i * inner;
          g[at] += y[at] * (dy[at] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) +
                         " / bias " + shape_str(bias.shape()) +
                         " do not match rows of " + shape_str(x.shape()));
  }
  const auto in = x.data(), g = gain.data(), b = bias.data();
  std::vector<double> xhat(m * n), inv_sigma(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_sigma[i];
      out[i * n + j] = xhat[i * n + j] * g[j] + b[j];
    }
  }
  return make_result(
      {m, n}, std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
        const auto& g = self.parents[1]->data;
        const auto& dy = self.grad;
        if (double* gx = grad_of(self, 0)) {
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dy[i * n + j] * g[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] += inv_sigma[i] *
                               (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
        if (double* gg = grad_of(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
          }
        }
        if (double* gb = grad_of(self, 2)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_rows(const Tensor& x) {
  require_rank2(x, "sum_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const auto in = x.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += in[i * n + j];
  }
  return make_result({m}, std::move(out), {x}, [m, n](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
      }
    }
  });
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("dropout rate must lie in [0, 1), got " +
                        std::to_string(rate));
  }
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (double& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep_scale;
  }
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace tqd
