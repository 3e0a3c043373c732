#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "imudiff/ad/tensor.hpp"

namespace imudiff::ad {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[B, C, L] + v[B, C] broadcast over L.
Tensor broadcast_add(const Tensor& x, const Tensor& v);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor cumulative_sum(const Tensor& x, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);

// a[N, M, K] x b[N, K, P] -> [N, M, P]
Tensor batched_matmul(const Tensor& a, const Tensor& b);
// x[..., in] W[out, in]^T + b[out] -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// x[B, Cin, L], w[Cout, Cin, K] (K odd), b[Cout]; stride 1, zero "same" padding.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& x);  // over the last axis
// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Running statistics are plain tensors so they travel with the weights.
struct BatchNormBuffers {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], unbiased batch variance
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kNormEps = 1e-5;

// x[B, C, L]. Train mode normalizes with batch statistics and updates the
// buffers with momentum 0.1; eval mode uses the buffers.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormBuffers& buffers, bool training);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [D, D] / [D]
};

// Unmasked multi-head self-attention over x[B, L, D].
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads);

}  // namespace imudiff::ad
