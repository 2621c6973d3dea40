#pragma once

#include <deque>
#include <string>
#include <vector>

#include "vaemmd/ops.hpp"

namespace vaemmd::nn {

using ops::Mode;

/// Trainable leaf with Adam moment slots. `group` partitions parameters
/// between independently optimized networks (e.g. "vae" vs "disc").
template <typename T>
struct Parameter {
  std::string name;
  std::string group;
  Tensor<T> value;
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
struct Buffer {
  std::string name;
  ops::RunningStats<T> stats;
};

/// Owns every parameter and running-statistics buffer of a model. Storage is
/// a deque so references handed to layers stay valid as the store grows.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, const std::string& group, Shape shape, std::vector<T> init);
  ops::RunningStats<T>& add_stats(const std::string& name, size_t channels);

  std::deque<Parameter<T>>& params() { return params_; }
  const std::deque<Parameter<T>>& params() const { return params_; }
  std::deque<Buffer<T>>& buffers() { return buffers_; }
  const std::deque<Buffer<T>>& buffers() const { return buffers_; }

  std::vector<Parameter<T>*> group(const std::string& group);
  Parameter<T>* find(const std::string& name);

  void zero_grad();
  void set_group_trainable(const std::string& group, bool on);
  size_t count_values() const;

 private:
  std::deque<Parameter<T>> params_;
  std::deque<Buffer<T>> buffers_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
template <typename T>
std::vector<T> uniform_init(size_t count, int64_t fan_in, Rng& rng);

template <typename T>
struct Conv3d {
  Tensor<T> weight, bias;
  int stride = 1, padding = 0;
  Conv3d() = default;
  Conv3d(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t cin, int64_t cout, int kernel,
         int stride, int padding, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv3d(x, weight, bias, stride, padding); }
};

template <typename T>
struct ConvTranspose3d {
  Tensor<T> weight, bias;
  int stride = 1, padding = 0;
  ConvTranspose3d() = default;
  ConvTranspose3d(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t cin, int64_t cout,
                  int kernel, int stride, int padding, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv_transpose3d(x, weight, bias, stride, padding); }
};

template <typename T>
struct BatchNorm3d {
  Tensor<T> gamma, beta;
  ops::RunningStats<T>* stats = nullptr;
  BatchNorm3d() = default;
  BatchNorm3d(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t channels);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return ops::batch_norm3d(x, gamma, beta, *stats, mode);
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight, bias;
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t in, int64_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

}  // namespace vaemmd::nn
