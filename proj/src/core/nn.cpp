#include "vaemmd/nn.hpp"

#include <cmath>

namespace vaemmd::nn {

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, const std::string& group, Shape shape, std::vector<T> init) {
  require(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate parameter name: " + name);
  Parameter<T> p;
  p.name = name;
  p.group = group;
  p.value = Tensor<T>::from(std::move(shape), std::move(init), true);
  p.m.assign(p.value.numel(), T(0));
  p.v.assign(p.value.numel(), T(0));
  params_.push_back(std::move(p));
  return params_.back().value;
}

template <typename T>
ops::RunningStats<T>& ParamStore<T>::add_stats(const std::string& name, size_t channels) {
  buffers_.push_back(Buffer<T>{name, ops::RunningStats<T>(channels)});
  return buffers_.back().stats;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::group(const std::string& group) {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_)
    if (p.group == group) out.push_back(&p);
  return out;
}

template <typename T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
void ParamStore<T>::set_group_trainable(const std::string& group, bool on) {
  for (auto& p : params_)
    if (p.group == group) p.value.set_requires_grad(on);
}

template <typename T>
size_t ParamStore<T>::count_values() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.value.numel());
  return n;
}

template <typename T>
std::vector<T> uniform_init(size_t count, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return v;
}

template <typename T>
Conv3d<T>::Conv3d(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t cin, int64_t cout,
                  int kernel, int stride_, int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  const int64_t k3 = int64_t(kernel) * kernel * kernel;
  const int64_t fan_in = cin * k3;
  weight = store.add(name + ".weight", group, {cout, cin, kernel, kernel, kernel},
                     uniform_init<T>(static_cast<size_t>(cout * fan_in), fan_in, rng));
  bias = store.add(name + ".bias", group, {cout}, uniform_init<T>(static_cast<size_t>(cout), fan_in, rng));
}

template <typename T>
ConvTranspose3d<T>::ConvTranspose3d(ParamStore<T>& store, const std::string& name, const std::string& group,
                                    int64_t cin, int64_t cout, int kernel, int stride_, int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  const int64_t k3 = int64_t(kernel) * kernel * kernel;
  const int64_t fan_in = cout * k3;
  weight = store.add(name + ".weight", group, {cin, cout, kernel, kernel, kernel},
                     uniform_init<T>(static_cast<size_t>(cin * cout * k3), fan_in, rng));
  bias = store.add(name + ".bias", group, {cout}, uniform_init<T>(static_cast<size_t>(cout), fan_in, rng));
}

template <typename T>
BatchNorm3d<T>::BatchNorm3d(ParamStore<T>& store, const std::string& name, const std::string& group,
                            int64_t channels) {
  gamma = store.add(name + ".gamma", group, {channels}, std::vector<T>(channels, T(1)));
  beta = store.add(name + ".beta", group, {channels}, std::vector<T>(channels, T(0)));
  stats = &store.add_stats(name + ".running", static_cast<size_t>(channels));
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t in, int64_t out,
                  Rng& rng) {
  weight = store.add(name + ".weight", group, {out, in}, uniform_init<T>(static_cast<size_t>(in * out), in, rng));
  bias = store.add(name + ".bias", group, {out}, uniform_init<T>(static_cast<size_t>(out), in, rng));
}

template class ParamStore<float>;
template class ParamStore<double>;
template std::vector<float> uniform_init(size_t, int64_t, Rng&);
template std::vector<double> uniform_init(size_t, int64_t, Rng&);
template struct Conv3d<float>;
template struct Conv3d<double>;
template struct ConvTranspose3d<float>;
template struct ConvTranspose3d<double>;
template struct BatchNorm3d<float>;
template struct BatchNorm3d<double>;
template struct Linear<float>;
template struct Linear<double>;

}  // namespace vaemmd::nn
