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
#include <vector>

#include "wavssl/context.hpp"
#include "wavssl/gradcheck.hpp"

using namespace wavssl;
using T = Tensor<double>;

namespace {

ContextConfig toy_config(ContextKind kind, std::size_t blocks = 1, std::size_t dim = 8,
                         std::size_t heads = 2) {
  ContextConfig cfg;
  cfg.kind = kind;
  cfg.num_blocks = blocks;
  cfg.model_dim = dim;
  cfg.num_heads = heads;
  cfg.depthwise_kernel = 3;
  cfg.pos_kernel = 5;
  cfg.pos_groups = 2;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("zeroed positional conv is the identity", "[pos]") {
  Rng rng(1);
  ParameterStore<double> store;
  PositionalEmbed<double> pos(store, "pos", toy_config(ContextKind::transformer), rng);
  for (auto& v : store.at("pos.weight").values_mut()) v = 0.0;
  auto x = T::randn({2, 7, 8}, rng);
  auto y = pos.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(y.at(i) == Catch::Approx(x.at(i)).margin(1e-15));
}

TEST_CASE("positional embedding keeps the shape for any T", "[pos]") {
  Rng rng(2);
  ParameterStore<double> store;
  PositionalEmbed<double> pos(store, "pos", toy_config(ContextKind::transformer), rng);
  for (std::size_t t : {1u, 7u, 49u}) {
    auto x = T::randn({1, t, 8}, rng);
    REQUIRE(pos.forward(x).shape() == x.shape());
  }
}

TEST_CASE("positional embedding gradients check out", "[pos][gradcheck]") {
  Rng rng(3);
  ParameterStore<double> store;
  PositionalEmbed<double> pos(store, "pos", toy_config(ContextKind::transformer), rng);
  auto x = T::randn({1, 6, 8}, rng, 1.0, true);
  std::vector<T> leaves{x};
  for (auto& [name, p] : store.params()) leaves.push_back(p);
  auto fwd = [&]() { return mean_all(mul(pos.forward(x), pos.forward(x))); };
  auto r = gradient_check<double>(fwd, leaves, 1e-5);
  REQUIRE(r.max_rel_err < 1e-6);
}

TEST_CASE("attention over a single frame is its value projection", "[attention]") {
  Rng rng(4);
  ParameterStore<double> store;
  MultiHeadAttention<double> attn(store, "attn", 8, 2, rng);
  auto x = T::randn({1, 1, 8}, rng);
  std::vector<T> probs;
  auto y = attn.forward(x, &probs);
  REQUIRE(y.shape() == Shape{1, 1, 8});
  REQUIRE(probs.size() == 2);
  for (const auto& p : probs) {
    REQUIRE(p.shape() == Shape{1, 1});
    REQUIRE(p.at(0) == Catch::Approx(1.0).margin(1e-15));
  }
}

TEST_CASE("attention rows sum to one", "[attention]") {
  Rng rng(5);
  ParameterStore<double> store;
  MultiHeadAttention<double> attn(store, "attn", 8, 2, rng);
  auto x = T::randn({2, 9, 8}, rng, 2.0);
  std::vector<T> probs;
  attn.forward(x, &probs);
  REQUIRE(probs.size() == 4);  // batch * heads
  for (const auto& p : probs) {
    for (std::size_t r = 0; r < p.dim(0); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < p.dim(1); ++c) s += p.at(r * p.dim(1) + c);
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("transformer block gradients check out", "[context][gradcheck]") {
  Rng rng(6);
  ParameterStore<double> store;
  TransformerBlock<double> blk(store, "blk", toy_config(ContextKind::transformer), rng);
  auto x = T::randn({1, 5, 8}, rng, 1.0, true);
  // small linear readout keeps finite-difference noise below the 1e-8
  // denominator floor for parameters with (near-)zero true gradients
  auto w = T::randn({1, 5, 8}, rng, 0.05);
  std::vector<T> leaves{x};
  for (auto& [name, p] : store.params()) leaves.push_back(p);
  auto fwd = [&]() {
    Rng fw(1);
    return mean_all(mul(blk.forward(x, fw, false), w));
  };
  auto r = gradient_check<double>(fwd, leaves, 1e-5);
  REQUIRE(r.max_rel_err < 1e-4);
}

TEST_CASE("conformer reduces to the final layer norm when branches are zeroed", "[context]") {
  Rng rng(7);
  ParameterStore<double> store;
  ConformerBlock<double> blk(store, "blk", toy_config(ContextKind::conformer), rng);
  for (auto& [name, p] : store.params()) {
    if (name.find(".ffn1.fc2") != std::string::npos || name.find(".ffn2.fc2") != std::string::npos ||
        name.find(".attn.out") != std::string::npos || name.find(".conv.pw2") != std::string::npos) {
      for (auto& v : p.values_mut()) v = 0.0;
    }
  }
  auto x = T::randn({2, 6, 8}, rng);
  Rng fw(1);
  auto y = blk.forward(x, fw, true);
  auto expect = layer_norm(x, T::full({8}, 1.0), T::zeros({8}));
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(y.at(i) == Catch::Approx(expect.at(i)).margin(1e-12));
}

TEST_CASE("conformer keeps the shape for any T", "[context]") {
  Rng rng(8);
  ParameterStore<double> store;
  ConformerBlock<double> blk(store, "blk", toy_config(ContextKind::conformer), rng);
  for (std::size_t t : {1u, 7u, 49u}) {
    auto x = T::randn({2, t, 8}, rng);
    Rng fw(1);
    // batch norm needs at least two rows: B*T = 2 at T=1
    REQUIRE(blk.forward(x, fw, true).shape() == x.shape());
  }
}

TEST_CASE("conformer block gradients check out with train-mode batchnorm", "[context][gradcheck]") {
  Rng rng(9);
  ParameterStore<double> store;
  ConformerBlock<double> blk(store, "blk", toy_config(ContextKind::conformer), rng);
  auto x = T::randn({2, 6, 8}, rng, 1.0, true);
  std::vector<T> leaves{x};
  for (auto& [name, p] : store.params()) leaves.push_back(p);
  auto fwd = [&]() {
    Rng fw(1);
    auto y = blk.forward(x, fw, true);
    return mean_all(mul(y, y));
  };
  auto r = gradient_check<double>(fwd, leaves, 1e-5);
  REQUIRE(r.max_rel_err < 1e-4);
}

TEST_CASE("zero blocks reduce contextualize to the positional embed", "[context]") {
  Rng rng(10);
  ParameterStore<double> store;
  auto cfg = toy_config(ContextKind::conformer, 0);
  ContextNetwork<double> net(store, "ctx", cfg, rng);
  auto x = T::randn({1, 5, 8}, rng);
  Rng fw(1);
  auto y = net.forward(x, fw, false);
  // reproduce the positional embed with the same parameters
  auto xi = reshape(x, {5, 8});
  auto pos = gelu(add_rowvec(grouped_conv1d_same(xi, store.at("ctx.pos.weight"), cfg.pos_groups),
                             store.at("ctx.pos.bias")));
  auto expect = add(xi, pos);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(y.at(i) == Catch::Approx(expect.at(i)).margin(1e-14));
}

TEST_CASE("transformer and conformer share shapes but not outputs", "[context]") {
  auto make = [&](ContextKind kind) {
    Rng rng(11);
    ParameterStore<double> store;
    ContextNetwork<double> net(store, "ctx", toy_config(kind, 2), rng);
    Rng data_rng(12);
    auto x = T::randn({1, 6, 8}, data_rng, 1.0);
    Rng fw(1);
    return net.forward(x, fw, false);
  };
  auto yt = make(ContextKind::transformer);
  auto yc = make(ContextKind::conformer);
  REQUIRE(yt.shape() == yc.shape());
  bool differs = false;
  for (std::size_t i = 0; i < yt.size(); ++i) {
    if (std::abs(yt.at(i) - yc.at(i)) > 1e-9) differs = true;
  }
  REQUIRE(differs);
}

TEST_CASE("gradient reaches every parameter of a small stack", "[context]") {
  Rng rng(13);
  ParameterStore<double> store;
  ContextNetwork<double> net(store, "ctx", toy_config(ContextKind::conformer, 2, 16, 2), rng);
  auto x = T::randn({2, 5, 16}, rng, 1.0, true);
  Rng fw(1);
  auto y = net.forward(x, fw, true);
  auto w = T::randn({2, 5, 16}, rng);
  backward(mean_all(mul(y, w)));
  for (const auto& [name, p] : store.params()) {
    double total = 0;
    for (double g : p.grad()) total += std::abs(g);
    INFO(name);
    REQUIRE(total > 0.0);
  }
}

TEST_CASE("blocks are permutation equivariant without positional input", "[context]") {
  Rng rng(14);
  ParameterStore<double> store;
  TransformerBlock<double> blk(store, "blk", toy_config(ContextKind::transformer), rng);
  auto x = T::randn({1, 4, 8}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> px(x.size());
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 8; ++c) px[t * 8 + c] = x.at(perm[t] * 8 + c);
  auto xp = T::from({1, 4, 8}, std::move(px));
  Rng fw(1);
  auto y = blk.forward(x, fw, false);
  auto yp = blk.forward(xp, fw, false);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 8; ++c)
      REQUIRE(yp.at(t * 8 + c) == Catch::Approx(y.at(perm[t] * 8 + c)).margin(1e-10));
}

TEST_CASE("long sequences stay finite at toy dims", "[context]") {
  Rng rng(15);
  ParameterStore<double> store;
  ContextNetwork<double> net(store, "ctx", toy_config(ContextKind::conformer, 1, 16, 2), rng);
  auto x = T::randn({1, 1000, 16}, rng, 1.0);
  Rng fw(1);
  // any non-finite intermediate would throw a NumericError
  auto y = net.forward(x, fw, false);
  REQUIRE(y.shape() == Shape{1, 1000, 16});
}

TEST_CASE("full-scale conformer parameter count is near the transformer baseline", "[context][params]") {
  const auto conf = static_cast<double>(count_parameters(full_scale_conformer()));
  const auto trans = static_cast<double>(count_parameters(full_scale_transformer()));
  REQUIRE(std::abs(conf - trans) / trans < 0.10);
}

TEST_CASE("context parameter formula matches the instantiated store", "[context][params]") {
  for (ContextKind kind : {ContextKind::transformer, ContextKind::conformer}) {
    Rng rng(16);
    ParameterStore<double> store;
    auto cfg = toy_config(kind, 2, 16, 2);
    ContextNetwork<double> net(store, "ctx", cfg, rng);
    REQUIRE(store.parameter_count() == count_parameters(cfg));
  }
}
