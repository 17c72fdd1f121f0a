#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "nmer/autograd.hpp"

namespace nmer::ag {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (n x m) + bias (1 x m) broadcast over rows.
Var add_row(const Var& a, const Var& bias);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
/// Clamps values; gradient passes only where the input lies strictly inside.
Var clamp(const Var& a, double lo, double hi);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row-major reinterpretation; rows*cols must match.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

/// Per-row max over the first lengths[b] entries of `steps`:
/// out(b, :) = max_{t < lengths[b]} steps[t](b, :).
Var masked_max_over_steps(std::span<const Var> steps, std::span<const int> lengths);
/// Max over contiguous row segments: out(i, :) = max over rows
/// [offsets[i], offsets[i+1]).
Var segment_max(const Var& a, std::span<const Eigen::Index> offsets);
/// Mean over consecutive groups of `group` rows.
Var group_mean_rows(const Var& a, Eigen::Index group);

/// Row-wise layer normalization with affine gain/bias (1 x d each).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Scaled dot-product multi-head self-attention core. q, k, v are
/// (batch*seq_len x d); rows b*seq_len .. b*seq_len+seq_len-1 belong to
/// sample b. Returns the concatenated head outputs (batch*seq_len x d).
Var attention(const Var& q, const Var& k, const Var& v, Eigen::Index seq_len, int heads);

/// Inverted dropout. Identity when p == 0.
Var dropout(const Var& a, double p, std::mt19937_64& rng);

/// Sum of all elements, as a 1x1.
Var sum(const Var& a);
/// Mean of all elements, as a 1x1.
Var mean(const Var& a);

}  // namespace nmer::ag
