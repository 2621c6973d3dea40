#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vaemmd/checkpoint.hpp"
#include "vaemmd/nn.hpp"

using namespace vaemmd;
using gradcheck::max_rel_error;
using gradcheck::project;
using gradcheck::random_leaf;

TEST_CASE("uniform init stays within 1/sqrt(fan_in) and is seed-determined") {
  Rng a(7), b(7);
  const auto w1 = nn::uniform_init<double>(1000, 27, a);
  const auto w2 = nn::uniform_init<double>(1000, 27, b);
  CHECK(w1 == w2);
  const double bound = 1.0 / std::sqrt(27.0);
  double lo = 1, hi = -1;
  for (double v : w1) {
    CHECK(std::abs(v) <= bound);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi - lo > bound);
}

TEST_CASE("param store groups, freezing and zero_grad") {
  nn::ParamStore<double> store;
  Rng rng(1);
  nn::Linear<double> a(store, "a", "g1", 3, 2, rng);
  nn::Linear<double> b(store, "b", "g2", 2, 1, rng);
  CHECK(store.group("g1").size() == 2);
  CHECK(store.group("g2").size() == 2);
  CHECK(store.count_values() == 3 * 2 + 2 + 2 + 1);
  CHECK(store.find("a.weight") != nullptr);
  CHECK(store.find("missing") == nullptr);

  auto x = TensorD::full({4, 3}, 0.5);
  store.set_group_trainable("g1", false);
  ops::sum(b(a(x))).backward();
  CHECK_FALSE(a.weight.has_grad());
  CHECK(b.weight.has_grad());
  store.set_group_trainable("g1", true);
  store.zero_grad();
  CHECK_FALSE(b.weight.has_grad());
}

TEST_CASE("layers forward through the matching op") {
  nn::ParamStore<double> store;
  Rng rng(3);
  nn::Conv3d<double> conv(store, "c", "g", 2, 3, 3, 1, 1, rng);
  CHECK(conv.weight.shape() == Shape{3, 2, 3, 3, 3});
  nn::ConvTranspose3d<double> up(store, "u", "g", 3, 2, 4, 2, 1, rng);
  CHECK(up.weight.shape() == Shape{3, 2, 4, 4, 4});
  nn::BatchNorm3d<double> bn(store, "bn", "g", 3);
  Rng r2(4);
  const auto x = random_leaf({2, 2, 4, 4, 4}, r2);
  NoGradGuard guard;
  const auto y = bn(conv(x), ops::Mode::kTrain);
  CHECK(y.shape() == Shape{2, 3, 4, 4, 4});
  CHECK(up(y).shape() == Shape{2, 2, 8, 8, 8});
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    nn::ParamStore<double> store;
    nn::Conv3d<double> conv(store, "c", "g", 2, 2, 3, 1, 1, rng);
    nn::BatchNorm3d<double> bn(store, "bn", "g", 2);
    nn::Linear<double> fc(store, "fc", "g", 2 * 27, 3, rng);
    const auto x = random_leaf({2, 2, 3, 3, 3}, rng);
    const uint64_t seed = rng.next_u64();
    auto f = [&](const std::vector<TensorD>& l) {
      auto h = ops::relu(bn(ops::conv3d(l[0], l[1], l[2], 1, 1), ops::Mode::kTrain));
      return project(ops::tanh(fc(ops::reshape(h, {2, 54}))), seed);
    };
    const double err = max_rel_error(f, {x, conv.weight, bn.gamma, bn.beta, fc.weight, fc.bias});
    CHECK(err < 1e-4);
    // A train-mode batch norm removes any per-channel constant, so the conv
    // bias feeding it has an exactly zero gradient.
    store.zero_grad();
    auto x2 = x;
    x2.zero_grad();
    f({x2, conv.weight, conv.bias}).backward();
    for (double g : conv.bias.grad()) CHECK(std::abs(g) < 1e-12);
  }
}

TEST_CASE("checkpoint export/import round-trips parameters, moments and statistics") {
  nn::ParamStore<float> a, b;
  Rng r1(1), r2(2);
  nn::Conv3d<float> ca(a, "c", "g", 1, 2, 3, 1, 1, r1);
  nn::BatchNorm3d<float> ba(a, "bn", "g", 2);
  nn::Conv3d<float> cb(b, "c", "g", 1, 2, 3, 1, 1, r2);
  nn::BatchNorm3d<float> bb(b, "bn", "g", 2);
  a.params()[0].m.assign(a.params()[0].value.numel(), 0.25f);
  ba.stats->mean[1] = 3.f;

  Checkpoint ck;
  export_store(a, ck, true);
  const std::string bytes = ck.serialize();
  import_store(b, Checkpoint::deserialize(bytes), true);
  CHECK(std::equal(ca.weight.data().begin(), ca.weight.data().end(), cb.weight.data().begin()));
  CHECK(bb.stats->mean[1] == 3.f);
  CHECK(b.params()[0].m == a.params()[0].m);

  Checkpoint again;
  export_store(b, again, true);
  CHECK(again.serialize() == bytes);

  nn::ParamStore<float> wrong;
  Rng r3(3);
  nn::Conv3d<float> cw(wrong, "c", "g", 1, 3, 3, 1, 1, r3);
  CHECK_THROWS_AS(import_store(wrong, ck, false), Error);
}

TEST_CASE("checkpoint rejects truncated and malformed payloads") {
  Checkpoint ck;
  ck.put("x", {2, 2}, {1, 2, 3, 4});
  ck.meta["kind"] = "test";
  const std::string bytes = ck.serialize();
  const auto back = Checkpoint::deserialize(bytes);
  CHECK(back.get("x").values == std::vector<double>{1, 2, 3, 4});
  CHECK(back.meta["kind"] == "test");
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(Checkpoint::deserialize("not a header"), Error);
  CHECK_THROWS_AS(ck.put("y", {3}, {1, 2}), Error);
}
