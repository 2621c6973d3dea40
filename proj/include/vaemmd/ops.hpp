#pragma once

#include <vector>

#include "vaemmd/rng.hpp"
#include "vaemmd/tensor.hpp"

/// Differentiable tensor operations. All functions are templates over the
/// scalar type and are explicitly instantiated for float and double.
namespace vaemmd::ops {

enum class Mode { kTrain, kEval };

// ---- elementwise ---------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);
/// x multiplied by the single value held in `s` (differentiable in both).
template <typename T> Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// ---- activations ---------------------------------------------------------

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

/// Inverted dropout; eval mode and rate 0 are exact identities.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng rng);

// ---- reductions ----------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// ---- structural ----------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [N, ...] -> [N, prod(...)]
template <typename T> Tensor<T> flatten(const Tensor<T>& x);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length);
/// Zero padding; `before`/`after` hold one entry per axis.
template <typename T> Tensor<T> pad(const Tensor<T>& x, const Shape& before, const Shape& after);
/// Rows of a [N, ...] tensor picked by index along axis 0 (repeats allowed).
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& rows);
/// Swap the last two axes.
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& x);

// ---- linear algebra ------------------------------------------------------

/// input [N,F], weight [G,F], bias [G] -> [N,G]
template <typename T> Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);
/// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// Squared Euclidean distances between rows: [n,d], [m,d] -> [n,m]
template <typename T> Tensor<T> pairwise_sq_dist(const Tensor<T>& a, const Tensor<T>& b);

// ---- convolution ---------------------------------------------------------

/// input [N,C,D,H,W], weight [K,C,kd,kh,kw], bias [K] (may be undefined).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding);

/// input [N,K,D,H,W], weight [K,C,kd,kh,kw] (same layout as the conv3d it
/// inverts), bias [C]. Output side (D-1)*stride - 2*padding + kd.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                           int padding);

// ---- normalization -------------------------------------------------------

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  explicit RunningStats(size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

/// Per-channel normalization over (N, D, H, W). Train mode uses batch
/// statistics (biased variance) and updates `stats`; eval mode reads them.
template <typename T>
Tensor<T> batch_norm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                       Mode mode, T eps = T(1e-5), T momentum = T(0.1));

}  // namespace vaemmd::ops
