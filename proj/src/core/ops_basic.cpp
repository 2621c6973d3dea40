#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

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

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int normalize_axis(int axis, size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorCode::kInvalidArgument,
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  return axis;
}

/// (outer, length, inner) view of a shape around one axis.
struct AxisSplit {
  int64_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

/// y = f(x); backward multiplies by d(x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D d) {
  std::vector<T> out(x.values().size());
  const auto& in = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, d](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& gx) {
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * d(xn->data[i], self.data[i]);
    });
  });
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    accumulate(an, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i]; });
    accumulate(bn, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i]; });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    accumulate(an, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i]; });
    accumulate(bn, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i]; });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    accumulate(an, [&](std::vector<T>& g) {
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    });
    accumulate(bn, [&](std::vector<T>& g) {
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  require(s.numel() == 1, ErrorCode::kInvalidArgument, "scale_by: factor must hold one value");
  const T f = s.item();
  std::vector<T> out(x.values());
  for (auto& v : out) v *= f;
  auto xn = x.node(), sn = s.node();
  return make_result<T>(x.shape(), std::move(out), {x, s}, [xn, sn](Node<T>& self) {
    const T f = sn->data[0];
    accumulate(xn, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] += f * self.grad[i]; });
    accumulate(sn, [&](std::vector<T>& g) {
      T acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
      g[0] += acc;
    });
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---- activations ---------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& in = x.values();
  std::vector<T> out(in.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.length * s.inner + i;
      T m = in[base];
      for (int64_t l = 1; l < s.length; ++l) m = std::max(m, in[base + l * s.inner]);
      T z = 0;
      for (int64_t l = 0; l < s.length; ++l) z += (out[base + l * s.inner] = std::exp(in[base + l * s.inner] - m));
      for (int64_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= z;
    }
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, s](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& gx) {
      for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
          const int64_t base = o * s.length * s.inner + i;
          T dot = 0;
          for (int64_t l = 0; l < s.length; ++l) dot += self.grad[base + l * s.inner] * self.data[base + l * s.inner];
          for (int64_t l = 0; l < s.length; ++l) {
            const int64_t k = base + l * s.inner;
            gx[k] += self.data[k] * (self.grad[k] - dot);
          }
        }
      }
    });
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& in = x.values();
  std::vector<T> out(in.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.length * s.inner + i;
      T m = in[base];
      for (int64_t l = 1; l < s.length; ++l) m = std::max(m, in[base + l * s.inner]);
      T z = 0;
      for (int64_t l = 0; l < s.length; ++l) z += std::exp(in[base + l * s.inner] - m);
      const T lse = m + std::log(z);
      for (int64_t l = 0; l < s.length; ++l) out[base + l * s.inner] = in[base + l * s.inner] - lse;
    }
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, s](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& gx) {
      for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
          const int64_t base = o * s.length * s.inner + i;
          T gsum = 0;
          for (int64_t l = 0; l < s.length; ++l) gsum += self.grad[base + l * s.inner];
          for (int64_t l = 0; l < s.length; ++l) {
            const int64_t k = base + l * s.inner;
            gx[k] += self.grad[k] - std::exp(self.data[k]) * gsum;
          }
        }
      }
    });
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument,
          "dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.values().size());
  std::vector<T> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, mask](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) {
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
  });
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto xn = x.node();
  return make_result<T>({1}, {acc}, {x}, [xn](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) { for (auto& v : g) v += self.grad[0]; });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---- structural ----------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), ErrorCode::kInvalidArgument,
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xn = x.node();
  return make_result<T>(std::move(shape), x.values(), {x}, [xn](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) { for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i]; });
  });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  require(x.rank() >= 1, ErrorCode::kInvalidArgument, "flatten: rank-0 tensor");
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat: no inputs");
  axis = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == parts[0].rank(), ErrorCode::kInvalidArgument, "concat: rank mismatch");
    for (size_t d = 0; d < p.rank(); ++d) {
      if (static_cast<int>(d) == axis) continue;
      require(p.dim(d) == parts[0].dim(d), ErrorCode::kInvalidArgument,
              "concat: dimension " + std::to_string(d) + " differs: " + shape_str(p.shape()) + " vs " +
                  shape_str(parts[0].shape()));
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int64_t> chunk;  // contiguous block per outer index for each part
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    const int64_t c = p.dim(axis) * os.inner;
    for (int64_t o = 0; o < os.outer; ++o)
      std::copy_n(p.values().begin() + o * c, c, out.begin() + o * os.length * os.inner + offset);
    chunk.push_back(c);
    offsets.push_back(offset);
    offset += c;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>(out_shape, std::move(out), parts, [nodes, chunk, offsets, os](Node<T>& self) {
    for (size_t k = 0; k < nodes.size(); ++k) {
      accumulate(nodes[k], [&](std::vector<T>& g) {
        for (int64_t o = 0; o < os.outer; ++o) {
          const T* src = self.grad.data() + o * os.length * os.inner + offsets[k];
          T* dst = g.data() + o * chunk[k];
          for (int64_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
        }
      });
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  require(start >= 0 && length > 0 && start + length <= x.dim(axis), ErrorCode::kInvalidArgument,
          "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") exceeds axis " +
              std::to_string(axis) + " of " + shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const int64_t c = length * s.inner;
  std::vector<T> out(static_cast<size_t>(s.outer * c));
  for (int64_t o = 0; o < s.outer; ++o)
    std::copy_n(x.values().begin() + o * s.length * s.inner + start * s.inner, c, out.begin() + o * c);
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), {x}, [xn, s, c, start](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) {
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < c; ++i) g[o * s.length * s.inner + start * s.inner + i] += self.grad[o * c + i];
    });
  });
}

template <typename T>
Tensor<T> pad(const Tensor<T>& x, const Shape& before, const Shape& after) {
  require(before.size() == x.rank() && after.size() == x.rank(), ErrorCode::kInvalidArgument,
          "pad: need one before/after entry per axis");
  Shape out_shape = x.shape();
  for (size_t d = 0; d < x.rank(); ++d) {
    require(before[d] >= 0 && after[d] >= 0, ErrorCode::kInvalidArgument, "pad: negative padding");
    out_shape[d] += before[d] + after[d];
  }
  // Map every input element to its flat output index once.
  const size_t rank = x.rank();
  std::vector<int64_t> out_strides(rank, 1);
  for (int d = static_cast<int>(rank) - 2; d >= 0; --d) out_strides[d] = out_strides[d + 1] * out_shape[d + 1];
  auto index = std::make_shared<std::vector<int64_t>>(x.values().size());
  std::vector<int64_t> pos(rank, 0);
  for (size_t i = 0; i < index->size(); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < rank; ++d) flat += (pos[d] + before[d]) * out_strides[d];
    (*index)[i] = flat;
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      if (++pos[d] < x.dim(d)) break;
      pos[d] = 0;
    }
  }
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)), T(0));
  for (size_t i = 0; i < index->size(); ++i) out[(*index)[i]] = x.values()[i];
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), {x}, [xn, index](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) {
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[(*index)[i]];
    });
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& rows) {
  require(x.rank() >= 1 && !rows.empty(), ErrorCode::kInvalidArgument, "gather_rows: empty selection");
  const int64_t n = x.dim(0);
  const int64_t row = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int64_t>(rows.size());
  std::vector<T> out(rows.size() * row);
  for (size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < n, ErrorCode::kInvalidArgument, "gather_rows: index out of range");
    std::copy_n(x.values().begin() + rows[r] * row, row, out.begin() + r * row);
  }
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), {x}, [xn, rows, row](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) {
      for (size_t r = 0; r < rows.size(); ++r)
        for (int64_t i = 0; i < row; ++i) g[rows[r] * row + i] += self.grad[r * row + i];
    });
  });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  require(x.rank() >= 2, ErrorCode::kInvalidArgument, "transpose_last2: rank < 2");
  const int64_t m = x.dim(x.rank() - 2), k = x.dim(x.rank() - 1);
  const int64_t batch = x.numel() / (m * k);
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  std::vector<T> out(x.values().size());
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < k; ++j) out[b * m * k + j * m + i] = x.values()[b * m * k + i * k + j];
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), {x}, [xn, batch, m, k](Node<T>& self) {
    accumulate(xn, [&](std::vector<T>& g) {
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < k; ++j) g[b * m * k + i * k + j] += self.grad[b * m * k + j * m + i];
    });
  });
}

// ---- linear algebra ------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(input.rank() == 2 && weight.rank() == 2, ErrorCode::kInvalidArgument,
          "linear: expected input [N,F] and weight [G,F], got " + shape_str(input.shape()) + " and " +
              shape_str(weight.shape()));
  const int64_t n = input.dim(0), f = input.dim(1), g = weight.dim(0);
  require(weight.dim(1) == f, ErrorCode::kInvalidArgument,
          "linear: feature dimension mismatch, input F=" + std::to_string(f) + " weight F=" +
              std::to_string(weight.dim(1)));
  require(!bias.defined() || bias.numel() == g, ErrorCode::kInvalidArgument,
          "linear: bias length must equal output features G=" + std::to_string(g));
  std::vector<T> out(n * g);
  MatMap<T> y(out.data(), n, g);
  CMatMap<T> x(input.values().data(), n, f);
  CMatMap<T> w(weight.values().data(), g, f);
  y.noalias() = x * w.transpose();
  if (bias.defined())
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < g; ++c) out[r * g + c] += bias.values()[c];
  auto xn = input.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>({n, g}, std::move(out), {input, weight, bias}, [xn, wn, bn, n, f, g](Node<T>& self) {
    CMatMap<T> dy(self.grad.data(), n, g);
    accumulate(xn, [&](std::vector<T>& gx) {
      MatMap<T>(gx.data(), n, f).noalias() += dy * CMatMap<T>(wn->data.data(), g, f);
    });
    accumulate(wn, [&](std::vector<T>& gw) {
      MatMap<T>(gw.data(), g, f).noalias() += dy.transpose() * CMatMap<T>(xn->data.data(), n, f);
    });
    accumulate(bn, [&](std::vector<T>& gb) {
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < g; ++c) gb[c] += self.grad[r * g + c];
    });
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          ErrorCode::kInvalidArgument, "bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(bs * m * n);
  for (int64_t i = 0; i < bs; ++i)
    MatMap<T>(out.data() + i * m * n, m, n).noalias() =
        CMatMap<T>(a.values().data() + i * m * k, m, k) * CMatMap<T>(b.values().data() + i * k * n, k, n);
  auto an = a.node(), bn = b.node();
  return make_result<T>({bs, m, n}, std::move(out), {a, b}, [an, bn, bs, m, k, n](Node<T>& self) {
    for (int64_t i = 0; i < bs; ++i) {
      CMatMap<T> dy(self.grad.data() + i * m * n, m, n);
      accumulate(an, [&](std::vector<T>& ga) {
        MatMap<T>(ga.data() + i * m * k, m, k).noalias() +=
            dy * CMatMap<T>(bn->data.data() + i * k * n, k, n).transpose();
      });
      accumulate(bn, [&](std::vector<T>& gb) {
        MatMap<T>(gb.data() + i * k * n, k, n).noalias() +=
            CMatMap<T>(an->data.data() + i * m * k, m, k).transpose() * dy;
      });
    }
  });
}

template <typename T>
Tensor<T> pairwise_sq_dist(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), ErrorCode::kInvalidArgument,
          "pairwise_sq_dist: expected [n,d] and [m,d], got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<T> out(n * m);
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      T acc = 0;
      for (int64_t c = 0; c < d; ++c) {
        const T diff = pa[i * d + c] - pb[j * d + c];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  auto an = a.node(), bn = b.node();
  return make_result<T>({n, m}, std::move(out), {a, b}, [an, bn, n, m, d](Node<T>& self) {
    const T* pa = an->data.data();
    const T* pb = bn->data.data();
    accumulate(an, [&](std::vector<T>& ga) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) {
          const T g2 = T(2) * self.grad[i * m + j];
          for (int64_t c = 0; c < d; ++c) ga[i * d + c] += g2 * (pa[i * d + c] - pb[j * d + c]);
        }
    });
    accumulate(bn, [&](std::vector<T>& gb) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) {
          const T g2 = T(2) * self.grad[i * m + j];
          for (int64_t c = 0; c < d; ++c) gb[j * d + c] -= g2 * (pa[i * d + c] - pb[j * d + c]);
        }
    });
  });
}

#define VAEMMD_INSTANTIATE(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> square(const Tensor<T>&);                                                    \
  template Tensor<T> abs(const Tensor<T>&);                                                       \
  template Tensor<T> exp(const Tensor<T>&);                                                       \
  template Tensor<T> log(const Tensor<T>&);                                                       \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                              \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                          \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> flatten(const Tensor<T>&);                                                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                  \
  template Tensor<T> slice(const Tensor<T>&, int, int64_t, int64_t);                              \
  template Tensor<T> pad(const Tensor<T>&, const Shape&, const Shape&);                           \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<int64_t>&);                  \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> pairwise_sq_dist(const Tensor<T>&, const Tensor<T>&);

VAEMMD_INSTANTIATE(float)
VAEMMD_INSTANTIATE(double)
#undef VAEMMD_INSTANTIATE

}  // namespace vaemmd::ops
