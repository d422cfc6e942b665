#pragma once

#include <cstddef>
#include <vector>

#include "spiro/autograd.hpp"
#include "spiro/rng.hpp"

namespace spiro::tc {

/// y = x W^T + b for x of shape [in] or [rows, in], W [out, in], b [out].
/// `b` may be undefined (no bias).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

/// Exact (erf) GELU.
Var gelu(const Var& x);

/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, Rng& rng);

/// Normalizes each row over the last axis, then applies gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Stacks [rows_i, d] blocks (or [d] rows) vertically.
Var concat_rows(const std::vector<Var>& parts);

/// Selects rows of a [R, d] matrix; the backward pass scatter-adds.
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);

/// Row i of a [R, d] matrix as a [d] vector.
Var row(const Var& x, std::size_t i);

struct AttentionResult {
  Var output;        // [L, d]
  Tensor attention;  // [heads, L, L], row q = distribution of query q over keys
};

/// Scaled dot-product attention per head on column blocks of Q, K, V.
/// mask[j] = true removes key j (probability exactly 0).
AttentionResult masked_multi_head_attention(const Var& q, const Var& k, const Var& v,
                                            const std::vector<bool>& mask, std::size_t heads);

/// -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, std::size_t label);

/// Binary cross-entropy on one logit; equals softmax CE over [0, logit].
Var sigmoid_cross_entropy(const Var& logit, int label);

/// Mean binary cross-entropy over a vector of logits.
Var sigmoid_cross_entropy_mean(const Var& logits, const std::vector<int>& labels);

/// sum_i x_i * w_i with a constant weight tensor; used for probing gradients.
Var weighted_sum(const Var& x, const Tensor& weights);

double sigmoid(double x);

}  // namespace spiro::tc
