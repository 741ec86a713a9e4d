#pragma once

#include <span>
#include <vector>

#include "l2p/tensor.hpp"

namespace l2p {

// Differentiable operations. None of them mutates its inputs.

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);
template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);

/// Standard product of a [m x k] and b [k x n].
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

/// x [... x k] times weight [k x n] plus optional bias [n], over the last axis.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias = {});

/// Per-batch product of a [B x m x k] with b [B x k x n], or with b [B x n x k]
/// read transposed when `transpose_b` is set.
template <typename S>
Tensor<S> batched_matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false);

/// Max-stabilized softmax along `axis` (negative counts from the back).
template <typename S> Tensor<S> softmax(const Tensor<S>& x, Index axis = -1);

/// Normalizes each row over the last axis, then applies gain and bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-6);

/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename S> Tensor<S> gelu(const Tensor<S>& x);

/// Concatenation along the token axis: [L_i x D] parts, or [B x L_i x D].
template <typename S> Tensor<S> concat_tokens(std::span<const Tensor<S>> parts);
template <typename S> Tensor<S> concat_tokens(std::initializer_list<Tensor<S>> parts) {
  return concat_tokens(std::span<const Tensor<S>>(parts.begin(), parts.size()));
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename S> Tensor<S> stack(std::span<const Tensor<S>> parts);

/// Repeats x along a new leading batch axis of extent `batch`.
template <typename S> Tensor<S> broadcast_batch(const Tensor<S>& x, Index batch);

/// [B x L x D] -> [(B*H) x L x D/H] and back.
template <typename S> Tensor<S> split_heads(const Tensor<S>& x, Index heads);
template <typename S> Tensor<S> merge_heads(const Tensor<S>& x, Index heads);

/// Mean of token rows [begin, end) of x [B x L x D], giving [B x D].
template <typename S> Tensor<S> mean_tokens(const Tensor<S>& x, Index begin, Index end);

/// Token row `index` of x [B x L x D], giving [B x D].
template <typename S> Tensor<S> select_token(const Tensor<S>& x, Index index);

/// Row `index` of x [B x D], giving [D].
template <typename S> Tensor<S> row(const Tensor<S>& x, Index index);

/// Mean over the batch of -log softmax(logits)[label]; logits are [B x C].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels);

/// 1 - u.v / (|u| |v|) for vectors of equal length.
template <typename S> Tensor<S> cosine_distance(const Tensor<S>& u, const Tensor<S>& v);

/// Sum of equally shaped tensors.
template <typename S> Tensor<S> add_n(std::span<const Tensor<S>> parts);

}  // namespace l2p
