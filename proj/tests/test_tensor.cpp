// Copyright 2026  The wavssl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "wavssl/gradcheck.hpp"
#include "wavssl/nn.hpp"
#include "wavssl/ops.hpp"
#include "wavssl/tensor.hpp"

using namespace wavssl;
using T = Tensor<double>;

TEST_CASE("softmax of a constant row is uniform", "[ops]") {
  auto x = T::from({3}, {0.0, 0.0, 0.0});
  auto y = softmax_last(x);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(y.at(i) == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("softmax rows are a distribution", "[ops]") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = T::randn({5, 9}, rng, 3.0);
    auto y = softmax_last(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        REQUIRE(y.at(r * 9 + j) >= 0.0);
        s += y.at(r * 9 + j);
      }
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("GLU gates the first half by the sigmoid of the second", "[ops]") {
  auto x = T::from({4}, {1.0, 2.0, 0.0, 0.0});
  auto y = glu_last(x);
  REQUIRE(y.size() == 2);
  REQUIRE(y.at(0) == Catch::Approx(0.5));
  REQUIRE(y.at(1) == Catch::Approx(1.0));
}

TEST_CASE("valid conv output length follows floor((L-k)/s)+1", "[ops]") {
  Rng rng(3);
  auto x = T::randn({1, 16000}, rng);
  auto w = T::randn({4, 1, 10}, rng);
  auto y = conv1d_valid(x, w, 5);
  REQUIRE(y.shape() == Shape{4, 3199});
}

TEST_CASE("backprop of sum(x*x) gives 2x", "[autodiff]") {
  auto x = T::from({3}, {1.0, 2.0, 3.0}, true);
  auto loss = sum_all(mul(x, x));
  backward(loss);
  REQUIRE(x.grad()[0] == Catch::Approx(2.0));
  REQUIRE(x.grad()[1] == Catch::Approx(4.0));
  REQUIRE(x.grad()[2] == Catch::Approx(6.0));
}

TEST_CASE("sum of softmax has zero gradient", "[autodiff]") {
  Rng rng(11);
  auto x = T::randn({6}, rng, 2.0, true);
  auto loss = sum_all(softmax_last(x));
  backward(loss);
  for (double g : x.grad()) REQUIRE(std::abs(g) < 1e-12);
}

TEST_CASE("backward demands a scalar loss", "[autodiff]") {
  auto x = T::from({2}, {1.0, 2.0}, true);
  auto y = mul(x, x);
  REQUIRE_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("two backward sweeps accumulate exactly twice the gradient", "[autodiff]") {
  Rng rng(5);
  auto x = T::randn({4, 4}, rng, 1.0, true);
  auto w = T::randn({4, 4}, rng, 1.0, true);

  auto run = [&]() { return mean_all(relu(matmul(x, w))); };
  backward(run());
  const std::vector<double> once_x = x.grad();
  const std::vector<double> once_w = w.grad();
  backward(run());
  for (std::size_t i = 0; i < once_x.size(); ++i)
    REQUIRE(x.grad()[i] == Catch::Approx(2.0 * once_x[i]).margin(1e-14));
  for (std::size_t i = 0; i < once_w.size(); ++i)
    REQUIRE(w.grad()[i] == Catch::Approx(2.0 * once_w[i]).margin(1e-14));
}

TEST_CASE("matmul-relu-mean chain matches finite differences", "[gradcheck]") {
  Rng rng(17);
  auto a = T::randn({4, 4}, rng, 1.0, true);
  auto b = T::randn({4, 4}, rng, 1.0, true);
  auto fwd = [&]() { return mean_all(relu(matmul(a, b))); };
  auto r = gradient_check<double>(fwd, {a, b}, 1e-5);
  REQUIRE_FALSE(r.kink_risk);
  REQUIRE(r.max_rel_err < 1e-6);
}

TEST_CASE("linear layer gradients are exact to 1e-7", "[gradcheck]") {
  Rng rng(23);
  ParameterStore<double> store;
  Linear<double> lin(store, "lin", 3, 2, rng);
  auto x = T::randn({5, 3}, rng, 1.0, true);
  std::vector<T> leaves{x};
  for (auto& [name, p] : store.params()) leaves.push_back(p);
  auto fwd = [&]() { return mean_all(mul(lin.forward(x), lin.forward(x))); };
  auto r = gradient_check<double>(fwd, leaves, 1e-5);
  REQUIRE(r.max_rel_err < 1e-7);
}

TEST_CASE("identity has zero gradcheck error", "[gradcheck]") {
  // dyadic values and a power-of-two step keep the central difference exact
  auto x = T::from({4}, {0.5, -0.75, 2.0, 4.25}, true);
  auto fwd = [&]() { return sum_all(x); };
  auto r = gradient_check<double>(fwd, {x}, 1.0 / 131072.0);
  REQUIRE(r.max_rel_err == 0.0);
}

TEST_CASE("primitive gradients match finite differences", "[gradcheck]") {
  Rng rng(31);
  SECTION("elementwise and unary") {
    auto a = T::randn({3, 4}, rng, 1.0, true);
    auto b = T::randn({3, 4}, rng, 1.0, true);
    // keep b away from zero for div
    for (auto& v : b.values_mut()) v += (v >= 0 ? 1.5 : -1.5);
    auto fwd = [&]() {
      auto u = div(mul(a, b), add_scalar(mul(b, b), 0.7));
      auto s = add(sigmoid(a), swish(sub(a, b)));
      auto g = gelu(mul_scalar(a, 0.8));
      return mean_all(add(u, add(s, g)));
    };
    auto r = gradient_check<double>(fwd, {a, b}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("exp log sqrt") {
    auto a = T::from({4}, {0.5, 1.1, 2.3, 0.9}, true);
    auto fwd = [&]() { return mean_all(add(log(add_scalar(mul(a, a), 0.3)), sqrt(exp(a)))); };
    auto r = gradient_check<double>(fwd, {a}, 1e-6);
    REQUIRE(r.max_rel_err < 1e-6);
  }
  SECTION("softmax and log_softmax") {
    auto a = T::randn({3, 5}, rng, 2.0, true);
    auto w = T::randn({3, 5}, rng, 1.0, true);
    auto fwd = [&]() {
      return mean_all(add(mul(softmax_last(a), w), mul(log_softmax_last(a), w)));
    };
    auto r = gradient_check<double>(fwd, {a, w}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("layer norm") {
    auto x = T::randn({4, 6}, rng, 1.3, true);
    auto gamma = T::randn({6}, rng, 0.5, true);
    auto beta = T::randn({6}, rng, 0.5, true);
    auto w = T::randn({4, 6}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(mul(layer_norm(x, gamma, beta), w)); };
    auto r = gradient_check<double>(fwd, {x, gamma, beta}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("group norm channels") {
    auto x = T::randn({3, 8}, rng, 1.0, true);
    auto gamma = T::randn({3}, rng, 0.5, true);
    auto beta = T::randn({3}, rng, 0.5, true);
    auto w = T::randn({3, 8}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(mul(group_norm_channels(x, gamma, beta), w)); };
    auto r = gradient_check<double>(fwd, {x, gamma, beta}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("batch norm train mode") {
    auto x = T::randn({6, 3}, rng, 1.0, true);
    auto gamma = T::randn({3}, rng, 0.5, true);
    auto beta = T::randn({3}, rng, 0.5, true);
    auto w = T::randn({6, 3}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(mul(batch_norm_train<double>(x, gamma, beta, nullptr), w)); };
    auto r = gradient_check<double>(fwd, {x, gamma, beta}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("conv1d valid") {
    auto x = T::randn({2, 12}, rng, 1.0, true);
    auto w = T::randn({3, 2, 4}, rng, 1.0, true);
    auto m = T::randn({3, 5}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(mul(conv1d_valid(x, w, 2), m)); };
    auto r = gradient_check<double>(fwd, {x, w}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("grouped same conv") {
    auto x = T::randn({7, 6}, rng, 1.0, true);
    auto w = T::randn({6, 3, 3}, rng, 1.0, true);
    auto m = T::randn({7, 6}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(mul(grouped_conv1d_same(x, w, 2), m)); };
    auto r = gradient_check<double>(fwd, {x, w}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("slice pad concat gather") {
    auto x = T::randn({6, 4}, rng, 1.0, true);
    auto fwd = [&]() {
      auto a = slice(x, 0, 1, 2, 2);                        // strided slice
      auto b = pad_axis(x, 0, 1, 1);
      auto c = concat<double>({a, slice(b, 0, 0, 2)}, 0);   // [4,4]
      auto g = gather_rows(c, {0, 0, 3});
      auto h = gather_last(g, {1, 1, 3, 0});
      return mean_all(mul(h, h));
    };
    auto r = gradient_check<double>(fwd, {x}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("cosine rowwise") {
    auto a = T::randn({4, 5}, rng, 1.0, true);
    auto b = T::randn({4, 5}, rng, 1.0, true);
    auto fwd = [&]() { return mean_all(cosine_rowwise(a, b)); };
    auto r = gradient_check<double>(fwd, {a, b}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
  SECTION("glu and transpose and mean_axis0") {
    auto x = T::randn({4, 6}, rng, 1.0, true);
    auto fwd = [&]() {
      auto g = glu_last(x);
      auto t = transpose2d(g);
      return mean_all(mul(mean_axis0(t), mean_axis0(t)));
    };
    auto r = gradient_check<double>(fwd, {x}, 1e-5);
    REQUIRE(r.max_rel_err < 1e-7);
  }
}

TEST_CASE("batch norm train output is standardized before affine", "[ops]") {
  Rng rng(41);
  auto x = T::randn({64, 5}, rng, 3.0);
  for (auto& v : x.values_mut()) v += 1.7;
  auto gamma = T::full({5}, 1.0);
  auto beta = T::zeros({5});
  auto y = batch_norm_train<double>(x, gamma, beta, nullptr);
  for (std::size_t j = 0; j < 5; ++j) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 64; ++i) mu += y.at(i * 5 + j);
    mu /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (y.at(i * 5 + j) - mu) * (y.at(i * 5 + j) - mu);
    var /= 64;
    REQUIRE(std::abs(mu) < 1e-6);
    REQUIRE(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch norm train mode rejects a single row", "[ops]") {
  auto x = T::zeros({1, 3});
  auto gamma = T::full({3}, 1.0);
  auto beta = T::zeros({3});
  REQUIRE_THROWS_AS(batch_norm_train<double>(x, gamma, beta, nullptr), ContractError);
}

TEST_CASE("batch norm eval is a fixed affine map", "[ops]") {
  auto gamma = T::from({2}, {2.0, 0.5});
  auto beta = T::from({2}, {1.0, -1.0});
  std::vector<double> mean{0.5, -0.5}, var{4.0, 1.0};
  auto x = T::from({2, 2}, {0.5, -0.5, 2.5, 0.5});
  auto y = batch_norm_eval(x, gamma, beta, mean, var);
  const double eps = 1e-5;
  REQUIRE(y.at(0) == Catch::Approx(1.0));
  REQUIRE(y.at(1) == Catch::Approx(-1.0));
  REQUIRE(y.at(2) == Catch::Approx(1.0 + 2.0 * 2.0 / std::sqrt(4.0 + eps)));
  REQUIRE(y.at(3) == Catch::Approx(-1.0 + 0.5 * 1.0 / std::sqrt(1.0 + eps)));
}

TEST_CASE("shape errors name the primitive and offending axes", "[errors]") {
  auto a = T::zeros({2, 3});
  auto b = T::zeros({3, 3});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    REQUIRE(std::string(e.what()).find("add") != std::string::npos);
    REQUIRE(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  REQUIRE_THROWS_AS(matmul(a, T::zeros({4, 2})), ShapeError);
  REQUIRE_THROWS_AS(conv1d_valid(T::zeros({1, 4}), T::zeros({2, 1, 10}), 1), ShapeError);
}

TEST_CASE("overflow raises a numeric error naming the op", "[errors]") {
  auto x = T::from({2}, {1e6, 1.0});
  try {
    exp(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("dropout is deterministic under a fixed seed and inverted", "[ops]") {
  auto x = T::full({1000}, 1.0, true);
  Rng r1(99), r2(99);
  auto y1 = dropout(x, 0.3, r1, true);
  auto y2 = dropout(x, 0.3, r2, true);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(y1.at(i) == y2.at(i));
  double mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    REQUIRE((y1.at(i) == 0.0 || y1.at(i) == Catch::Approx(1.0 / 0.7)));
    mean += y1.at(i);
  }
  REQUIRE(std::abs(mean / 1000.0 - 1.0) < 0.06);
  Rng r3(1);
  auto ye = dropout(x, 0.3, r3, false);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(ye.at(i) == 1.0);
}

TEST_CASE("straight-through passes hard values forward and soft grads back", "[ops]") {
  auto logits = T::from({3}, {0.1, 2.0, -0.3}, true);
  auto soft = softmax_last(logits);
  auto st = straight_through(soft, {0.0, 1.0, 0.0});
  REQUIRE(st.at(0) == 0.0);
  REQUIRE(st.at(1) == 1.0);
  auto w = T::from({3}, {0.4, -1.2, 0.9});
  backward(sum_all(mul(st, w)));
  const auto hard_grads = logits.grad();

  auto logits2 = T::from({3}, {0.1, 2.0, -0.3}, true);
  backward(sum_all(mul(softmax_last(logits2), w)));
  for (std::size_t i = 0; i < 3; ++i)
    REQUIRE(hard_grads[i] == Catch::Approx(logits2.grad()[i]).margin(1e-12));
}

TEST_CASE("parameter store enforces unique paths and zeroes grads", "[store]") {
  ParameterStore<double> store;
  store.create("enc.w", T::zeros({2, 2}));
  REQUIRE_THROWS_AS(store.create("enc.w", T::zeros({2, 2})), ContractError);
  auto& p = store.at("enc.w");
  backward(sum_all(mul(p, p)));
  store.zero_grad();
  for (double g : p.grad()) REQUIRE(g == 0.0);
  REQUIRE(store.parameter_count() == 4);
}
