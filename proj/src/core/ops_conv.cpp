#include <Eigen/Core>
#include <cmath>

#include "vaemmd/ops.hpp"

namespace vaemmd::ops {

using detail::accumulate;
using detail::make_result;
using detail::Node;

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Geometry of a strided 3D cross-correlation from a "wide" grid (the conv
/// input) onto a "narrow" grid (the conv output). conv_transpose3d runs the
/// same geometry in the opposite direction.
struct ConvGeometry {
  int64_t channels = 0;  // channels on the wide side
  int64_t in[3] = {};    // wide grid
  int64_t out[3] = {};   // narrow grid
  int64_t k[3] = {};
  int64_t stride = 1, pad = 0;

  int64_t in_size() const { return in[0] * in[1] * in[2]; }
  int64_t out_size() const { return out[0] * out[1] * out[2]; }
  int64_t rows() const { return channels * k[0] * k[1] * k[2]; }
};

/// cols[rows, out_size] gathered from one sample of the wide grid.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
  const int64_t p = g.out_size();
  int64_t row = 0;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int64_t a = 0; a < g.k[0]; ++a)
      for (int64_t b = 0; b < g.k[1]; ++b)
        for (int64_t e = 0; e < g.k[2]; ++e, ++row) {
          T* dst = cols + row * p;
          for (int64_t z = 0; z < g.out[0]; ++z) {
            const int64_t iz = z * g.stride - g.pad + a;
            for (int64_t y = 0; y < g.out[1]; ++y) {
              const int64_t iy = y * g.stride - g.pad + b;
              T* d = dst + (z * g.out[1] + y) * g.out[2];
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
                std::fill_n(d, g.out[2], T(0));
                continue;
              }
              const T* s = src + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (int64_t x = 0; x < g.out[2]; ++x) {
                const int64_t ix = x * g.stride - g.pad + e;
                d[x] = (ix >= 0 && ix < g.in[2]) ? s[ix] : T(0);
              }
            }
          }
        }
}

/// Adjoint of im2col: scatter-add cols back onto the wide grid.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dst) {
  const int64_t p = g.out_size();
  int64_t row = 0;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int64_t a = 0; a < g.k[0]; ++a)
      for (int64_t b = 0; b < g.k[1]; ++b)
        for (int64_t e = 0; e < g.k[2]; ++e, ++row) {
          const T* src = cols + row * p;
          for (int64_t z = 0; z < g.out[0]; ++z) {
            const int64_t iz = z * g.stride - g.pad + a;
            if (iz < 0 || iz >= g.in[0]) continue;
            for (int64_t y = 0; y < g.out[1]; ++y) {
              const int64_t iy = y * g.stride - g.pad + b;
              if (iy < 0 || iy >= g.in[1]) continue;
              const T* s = src + (z * g.out[1] + y) * g.out[2];
              T* d = dst + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (int64_t x = 0; x < g.out[2]; ++x) {
                const int64_t ix = x * g.stride - g.pad + e;
                if (ix >= 0 && ix < g.in[2]) d[ix] += s[x];
              }
            }
          }
        }
}

const char* kAxisNames[3] = {"depth", "height", "width"};

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding, const char* op) {
  require(input.rank() == 5, ErrorCode::kInvalidArgument,
          std::string(op) + ": input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 5, ErrorCode::kInvalidArgument,
          std::string(op) + ": weight must be 5-D, got " + shape_str(weight.shape()));
  require(stride >= 1, ErrorCode::kInvalidArgument, std::string(op) + ": stride must be >= 1");
  require(padding >= 0, ErrorCode::kInvalidArgument, std::string(op) + ": padding must be >= 0");
}

template <typename T>
void add_channel_bias(std::vector<T>& out, int64_t n, int64_t channels, int64_t spatial, const Tensor<T>& bias) {
  if (!bias.defined()) return;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < channels; ++c) {
      const T b = bias.values()[c];
      T* p = out.data() + (i * channels + c) * spatial;
      for (int64_t s = 0; s < spatial; ++s) p[s] += b;
    }
}

template <typename T>
void channel_bias_grad(const std::vector<T>& grad, int64_t n, int64_t channels, int64_t spatial, std::vector<T>& gb) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < channels; ++c) {
      const T* p = grad.data() + (i * channels + c) * spatial;
      T acc = 0;
      for (int64_t s = 0; s < spatial; ++s) acc += p[s];
      gb[c] += acc;
    }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
  check_conv_args(input, weight, stride, padding, "conv3d");
  const int64_t n = input.dim(0), c = input.dim(1), kout = weight.dim(0);
  require(weight.dim(1) == c, ErrorCode::kInvalidArgument,
          "conv3d: input channels " + std::to_string(c) + " do not match weight channels " +
              std::to_string(weight.dim(1)));
  require(!bias.defined() || bias.numel() == kout, ErrorCode::kInvalidArgument,
          "conv3d: bias length must equal output channels " + std::to_string(kout));
  ConvGeometry g;
  g.channels = c;
  g.stride = stride;
  g.pad = padding;
  for (int d = 0; d < 3; ++d) {
    g.in[d] = input.dim(2 + d);
    g.k[d] = weight.dim(2 + d);
    require(g.in[d] + 2 * padding >= g.k[d], ErrorCode::kInvalidArgument,
            std::string("conv3d: ") + kAxisNames[d] + " " + std::to_string(g.in[d]) + " + 2*padding is smaller than kernel " +
                std::to_string(g.k[d]));
    g.out[d] = (g.in[d] + 2 * padding - g.k[d]) / stride + 1;
  }
  const int64_t rows = g.rows(), p = g.out_size(), in_size = g.in_size();
  std::vector<T> out(n * kout * p);
  std::vector<T> cols(rows * p);
  CMatMap<T> w(weight.values().data(), kout, rows);
  for (int64_t i = 0; i < n; ++i) {
    im2col(input.values().data() + i * c * in_size, g, cols.data());
    MatMap<T>(out.data() + i * kout * p, kout, p).noalias() = w * CMatMap<T>(cols.data(), rows, p);
  }
  add_channel_bias(out, n, kout, p, bias);

  auto xn = input.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  Shape out_shape{n, kout, g.out[0], g.out[1], g.out[2]};
  return make_result<T>(out_shape, std::move(out), {input, weight, bias}, [xn, wn, bn, g, n, kout](Node<T>& self) {
    const int64_t rows = g.rows(), p = g.out_size(), in_size = g.in_size();
    std::vector<T> cols(rows * p);
    CMatMap<T> w(wn->data.data(), kout, rows);
    for (int64_t i = 0; i < n; ++i) {
      CMatMap<T> dy(self.grad.data() + i * kout * p, kout, p);
      if (wn->requires_grad) {
        im2col(xn->data.data() + i * g.channels * in_size, g, cols.data());
        MatMap<T>(wn->grad_buffer().data(), kout, rows).noalias() += dy * CMatMap<T>(cols.data(), rows, p).transpose();
      }
      if (xn->requires_grad) {
        MatMap<T>(cols.data(), rows, p).noalias() = w.transpose() * dy;
        col2im(cols.data(), g, xn->grad_buffer().data() + i * g.channels * in_size);
      }
    }
    accumulate(bn, [&](std::vector<T>& gb) { channel_bias_grad(self.grad, n, kout, p, gb); });
  });
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                           int padding) {
  check_conv_args(input, weight, stride, padding, "conv_transpose3d");
  const int64_t n = input.dim(0), kin = input.dim(1), cout = weight.dim(1);
  require(weight.dim(0) == kin, ErrorCode::kInvalidArgument,
          "conv_transpose3d: input channels " + std::to_string(kin) + " do not match weight dim 0 " +
              std::to_string(weight.dim(0)));
  require(!bias.defined() || bias.numel() == cout, ErrorCode::kInvalidArgument,
          "conv_transpose3d: bias length must equal output channels " + std::to_string(cout));
  ConvGeometry g;
  g.channels = cout;
  g.stride = stride;
  g.pad = padding;
  for (int d = 0; d < 3; ++d) {
    g.out[d] = input.dim(2 + d);
    g.k[d] = weight.dim(2 + d);
    g.in[d] = (g.out[d] - 1) * stride - 2 * padding + g.k[d];
    require(g.in[d] >= 1, ErrorCode::kInvalidArgument,
            std::string("conv_transpose3d: non-positive output ") + kAxisNames[d]);
  }
  const int64_t rows = g.rows(), p = g.out_size(), out_size = g.in_size();
  std::vector<T> out(n * cout * out_size, T(0));
  std::vector<T> cols(rows * p);
  CMatMap<T> w(weight.values().data(), kin, rows);
  for (int64_t i = 0; i < n; ++i) {
    MatMap<T>(cols.data(), rows, p).noalias() = w.transpose() * CMatMap<T>(input.values().data() + i * kin * p, kin, p);
    col2im(cols.data(), g, out.data() + i * cout * out_size);
  }
  add_channel_bias(out, n, cout, out_size, bias);

  auto xn = input.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  Shape out_shape{n, cout, g.in[0], g.in[1], g.in[2]};
  return make_result<T>(out_shape, std::move(out), {input, weight, bias}, [xn, wn, bn, g, n, kin](Node<T>& self) {
    const int64_t rows = g.rows(), p = g.out_size(), out_size = g.in_size();
    std::vector<T> cols(rows * p);
    CMatMap<T> w(wn->data.data(), kin, rows);
    for (int64_t i = 0; i < n; ++i) {
      im2col(self.grad.data() + i * g.channels * out_size, g, cols.data());
      CMatMap<T> c(cols.data(), rows, p);
      accumulate(xn, [&](std::vector<T>& gx) {
        MatMap<T>(gx.data() + i * kin * p, kin, p).noalias() += w * c;
      });
      accumulate(wn, [&](std::vector<T>& gw) {
        MatMap<T>(gw.data(), kin, rows).noalias() += CMatMap<T>(xn->data.data() + i * kin * p, kin, p) * c.transpose();
      });
    }
    accumulate(bn, [&](std::vector<T>& gb) { channel_bias_grad(self.grad, n, g.channels, out_size, gb); });
  });
}

template <typename T>
Tensor<T> batch_norm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                       Mode mode, T eps, T momentum) {
  require(input.rank() == 5, ErrorCode::kInvalidArgument,
          "batch_norm3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  const int64_t n = input.dim(0), c = input.dim(1), s = input.numel() / (n * c);
  require(gamma.numel() == c && beta.numel() == c, ErrorCode::kInvalidArgument,
          "batch_norm3d: gamma/beta must have one entry per channel (" + std::to_string(c) + ")");
  require(stats.mean.size() == static_cast<size_t>(c) && stats.var.size() == static_cast<size_t>(c),
          ErrorCode::kInvalidArgument, "batch_norm3d: running statistics have the wrong channel count");
  const int64_t count = n * s;
  if (mode == Mode::kTrain)
    require(count >= 2, ErrorCode::kInvalidArgument,
            "batch_norm3d: train mode needs at least 2 values per channel (variance undefined)");

  const auto& x = input.values();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  for (int64_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (mode == Mode::kTrain) {
      double acc = 0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < s; ++k) acc += x[(i * c + ch) * s + k];
      mu = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < s; ++k) {
          const double d = x[(i * c + ch) * s + k] - mu;
          sq += d * d;
        }
      var = static_cast<T>(sq / static_cast<double>(count));
      const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
      stats.mean[ch] = (T(1) - momentum) * stats.mean[ch] + momentum * mu;
      stats.var[ch] = (T(1) - momentum) * stats.var[ch] + momentum * unbiased;
    } else {
      mu = stats.mean[ch];
      var = stats.var[ch];
    }
    (*inv_std)[ch] = T(1) / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < s; ++k) {
        const int64_t idx = (i * c + ch) * s + k;
        (*xhat)[idx] = (x[idx] - mu) * (*inv_std)[ch];
      }
  }
  std::vector<T> out(x.size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T ga = gamma.values()[ch], be = beta.values()[ch];
      for (int64_t k = 0; k < s; ++k) {
        const int64_t idx = (i * c + ch) * s + k;
        out[idx] = ga * (*xhat)[idx] + be;
      }
    }

  auto xn = input.node(), gn = gamma.node(), bn = beta.node();
  const bool train = mode == Mode::kTrain;
  return make_result<T>(input.shape(), std::move(out), {input, gamma, beta},
                        [xn, gn, bn, xhat, inv_std, n, c, s, train](Node<T>& self) {
    const auto& gy = self.grad;
    std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t k = 0; k < s; ++k) {
          const int64_t idx = (i * c + ch) * s + k;
          sum_g[ch] += gy[idx];
          sum_gx[ch] += gy[idx] * (*xhat)[idx];
        }
    accumulate(gn, [&](std::vector<T>& g) { for (int64_t ch = 0; ch < c; ++ch) g[ch] += sum_gx[ch]; });
    accumulate(bn, [&](std::vector<T>& g) { for (int64_t ch = 0; ch < c; ++ch) g[ch] += sum_g[ch]; });
    accumulate(xn, [&](std::vector<T>& gx) {
      const T m = static_cast<T>(n * s);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T ga = gn->data[ch], is = (*inv_std)[ch];
        for (int64_t i = 0; i < n; ++i)
          for (int64_t k = 0; k < s; ++k) {
            const int64_t idx = (i * c + ch) * s + k;
            if (train)
              gx[idx] += ga * is / m * (m * gy[idx] - sum_g[ch] - (*xhat)[idx] * sum_gx[ch]);
            else
              gx[idx] += ga * is * gy[idx];
          }
      }
    });
  });
}

#define VAEMMD_INSTANTIATE(T)                                                                                  \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                   \
  template Tensor<T> conv_transpose3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);         \
  template Tensor<T> batch_norm3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, RunningStats<T>&, Mode, \
                                  T, T);

VAEMMD_INSTANTIATE(float)
VAEMMD_INSTANTIATE(double)
#undef VAEMMD_INSTANTIATE

}  // namespace vaemmd::ops
