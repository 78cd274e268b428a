#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tqd/tensor.hpp"

namespace tqd {

/// Matrix product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T for [m x k] and [n x k]; avoids materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise (Hadamard) product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// Adds a length-n bias to every row of an [m x n] matrix. This is the only
/// broadcast the library supports.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open slice [begin, end) of a rank-2 tensor along axis 0 or 1.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);

/// Softmax along `axis`, stabilized by max subtraction. Throws NumericError
/// on non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);

inline constexpr double kLayerNormEps = 1e-5;
/// Normalizes each row of [m x n] to zero mean / unit variance, then applies
/// per-column gain and bias (both length n).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
/// log(max(x, floor)); gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double floor);

/// Sum / mean of all entries, as a shape-[1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row sums of a rank-2 tensor: [m x n] -> [m].
Tensor sum_rows(const Tensor& x);

/// Inverted dropout: zeroes each entry with probability `rate` and scales
/// survivors by 1/(1-rate). The mask is drawn from `seed` alone, so the same
/// seed always reproduces the same mask.
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed);

}  // namespace tqd
