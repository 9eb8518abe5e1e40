// wavssl/context.hpp
//
// Context network over latent frames, in two flavors behind one interface:
// pre-norm transformer blocks and conformer blocks (feed-forward sandwich
// with self-attention and a gated depthwise-convolution module). Position
// information comes from a convolutional embedding added to the input.

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

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wavssl/nn.hpp"
#include "wavssl/ops.hpp"
#include "wavssl/tensor.hpp"

namespace wavssl {

enum class ContextKind { transformer, conformer };

struct ContextConfig {
  ContextKind kind = ContextKind::conformer;
  std::size_t num_blocks = 2;
  std::size_t model_dim = 64;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 0;           // 0 means 4 * model_dim
  std::size_t depthwise_kernel = 3;  // conformer conv module; must be odd
  std::size_t pos_kernel = 9;        // positional conv (128 at full scale)
  std::size_t pos_groups = 4;        // 16 at full scale
  double dropout = 0.1;

  std::size_t ffn() const { return ffn_dim == 0 ? 4 * model_dim : ffn_dim; }

  void validate() const {
    if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
      throw ContractError("context: model_dim must be divisible by num_heads");
    }
    if (kind == ContextKind::conformer && depthwise_kernel % 2 == 0) {
      throw ContractError("context: conformer depthwise kernel must be odd");
    }
    if (pos_groups == 0 || model_dim % pos_groups != 0) {
      throw ContractError("context: pos_groups must divide model_dim");
    }
  }
};

inline ContextConfig full_scale_conformer() {
  ContextConfig cfg;
  cfg.kind = ContextKind::conformer;
  cfg.num_blocks = 14;
  cfg.model_dim = 512;
  cfg.num_heads = 8;
  cfg.depthwise_kernel = 31;
  cfg.pos_kernel = 128;
  cfg.pos_groups = 16;
  return cfg;
}

inline ContextConfig full_scale_transformer() {
  ContextConfig cfg;
  cfg.kind = ContextKind::transformer;
  cfg.num_blocks = 12;
  cfg.model_dim = 768;
  cfg.num_heads = 12;
  cfg.pos_kernel = 128;
  cfg.pos_groups = 16;
  return cfg;
}

/// Exact trainable parameter count of a context stack.
inline std::size_t count_parameters(const ContextConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim, f = cfg.ffn();
  const std::size_t mhsa = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t ln = 2 * d;
  std::size_t block = 0;
  if (cfg.kind == ContextKind::transformer) {
    block = mhsa + ffn + 2 * ln;
  } else {
    const std::size_t conv = d * 2 * d + 2 * d    // pointwise expand
                             + d * cfg.depthwise_kernel + d  // depthwise + bias
                             + 2 * d                          // batch norm affine
                             + d * d + d;                     // pointwise project
    block = 2 * ffn + mhsa + conv + 5 * ln;
  }
  const std::size_t pos = d * (d / cfg.pos_groups) * cfg.pos_kernel + d;
  return cfg.num_blocks * block + pos;
}

namespace detail {

/// [B, T, d] -> one batch row as [T, d].
template <typename Real>
Tensor<Real> batch_row(const Tensor<Real>& x, std::size_t b) {
  return reshape(slice(x, 0, b, 1), {x.dim(1), x.dim(2)});
}

template <typename Real>
Tensor<Real> stack_rows(std::vector<Tensor<Real>> rows) {
  std::vector<Tensor<Real>> lifted;
  lifted.reserve(rows.size());
  for (auto& r : rows) lifted.push_back(reshape(r, {std::size_t{1}, r.dim(0), r.dim(1)}));
  return concat(lifted, 0);
}

}  // namespace detail

/// Convolutional relative positional embedding:
/// x + GELU(grouped_conv(x) + bias), shape preserved.
template <typename Real>
class PositionalEmbed {
 public:
  PositionalEmbed() = default;
  PositionalEmbed(ParameterStore<Real>& store, const std::string& prefix, const ContextConfig& cfg,
                  Rng& rng)
      : groups_(cfg.pos_groups) {
    const std::size_t d = cfg.model_dim;
    const std::size_t cg = d / cfg.pos_groups;
    weight_ = store.create(prefix + ".weight",
                           scaled_normal_init<Real>({d, cg, cfg.pos_kernel}, cg * cfg.pos_kernel, rng));
    bias_ = store.create(prefix + ".bias", Tensor<Real>::zeros({d}));
  }

  /// x is [B, T, d].
  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t b = x.dim(0);
    std::vector<Tensor<Real>> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      Tensor<Real> xi = detail::batch_row(x, i);
      Tensor<Real> pos = gelu(add_rowvec(grouped_conv1d_same(xi, weight_, groups_), bias_));
      rows.push_back(add(xi, pos));
    }
    return detail::stack_rows(std::move(rows));
  }

 private:
  std::size_t groups_ = 1;
  Tensor<Real> weight_, bias_;
};

template <typename Real>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
                     std::size_t heads, Rng& rng)
      : dim_(dim), heads_(heads) {
    q_ = Linear<Real>(store, prefix + ".q", dim, dim, rng);
    k_ = Linear<Real>(store, prefix + ".k", dim, dim, rng);
    v_ = Linear<Real>(store, prefix + ".v", dim, dim, rng);
    out_ = Linear<Real>(store, prefix + ".out", dim, dim, rng);
  }

  /// x is [B, T, d]. When `attn_out` is given, the per-head attention rows
  /// (stacked over batch and heads) are written there for inspection.
  Tensor<Real> forward(const Tensor<Real>& x, std::vector<Tensor<Real>>* attn_out = nullptr) const {
    const std::size_t b = x.dim(0), t = x.dim(1);
    const std::size_t dh = dim_ / heads_;
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<Real> q = q_.forward(x), k = k_.forward(x), v = v_.forward(x);
    std::vector<Tensor<Real>> rows;
    rows.reserve(b);
    for (std::size_t bi = 0; bi < b; ++bi) {
      Tensor<Real> qb = detail::batch_row(q, bi);
      Tensor<Real> kb = detail::batch_row(k, bi);
      Tensor<Real> vb = detail::batch_row(v, bi);
      std::vector<Tensor<Real>> head_ctx;
      head_ctx.reserve(heads_);
      for (std::size_t h = 0; h < heads_; ++h) {
        Tensor<Real> qh = slice(qb, 1, h * dh, dh);
        Tensor<Real> kh = slice(kb, 1, h * dh, dh);
        Tensor<Real> vh = slice(vb, 1, h * dh, dh);
        Tensor<Real> scores = mul_scalar(matmul(qh, transpose2d(kh)), scale);
        Tensor<Real> probs = softmax_last(scores);  // [T, T]
        if (attn_out) attn_out->push_back(probs);
        head_ctx.push_back(matmul(probs, vh));  // [T, dh]
      }
      rows.push_back(concat(head_ctx, 1));
    }
    (void)t;
    return out_.forward(detail::stack_rows(std::move(rows)));
  }

 private:
  std::size_t dim_ = 0, heads_ = 0;
  Linear<Real> q_, k_, v_, out_;
};

template <typename Real>
class FeedForward {
 public:
  enum class Act { gelu, swish };

  FeedForward() = default;
  FeedForward(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
              std::size_t hidden, Act act, Rng& rng)
      : act_(act) {
    fc1_ = Linear<Real>(store, prefix + ".fc1", dim, hidden, rng);
    fc2_ = Linear<Real>(store, prefix + ".fc2", hidden, dim, rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x, Real dropout_p, Rng& rng, bool train) const {
    Tensor<Real> h = fc1_.forward(x);
    h = act_ == Act::gelu ? gelu(h) : swish(h);
    h = dropout(h, dropout_p, rng, train);
    return dropout(fc2_.forward(h), dropout_p, rng, train);
  }

 private:
  Act act_ = Act::gelu;
  Linear<Real> fc1_, fc2_;
};

/// Pre-norm residual block: x += MHSA(LN x); x += FFN(LN x).
template <typename Real>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore<Real>& store, const std::string& prefix, const ContextConfig& cfg,
                   Rng& rng)
      : dropout_(static_cast<Real>(cfg.dropout)) {
    ln1_ = LayerNorm<Real>(store, prefix + ".ln1", cfg.model_dim);
    attn_ = MultiHeadAttention<Real>(store, prefix + ".attn", cfg.model_dim, cfg.num_heads, rng);
    ln2_ = LayerNorm<Real>(store, prefix + ".ln2", cfg.model_dim);
    ffn_ = FeedForward<Real>(store, prefix + ".ffn", cfg.model_dim, cfg.ffn(),
                             FeedForward<Real>::Act::gelu, rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x, Rng& rng, bool train,
                       std::vector<Tensor<Real>>* attn_out = nullptr) const {
    Tensor<Real> y = add(x, dropout(attn_.forward(ln1_.forward(x), attn_out), dropout_, rng, train));
    return add(y, ffn_.forward(ln2_.forward(y), dropout_, rng, train));
  }

 private:
  Real dropout_ = 0;
  LayerNorm<Real> ln1_, ln2_;
  MultiHeadAttention<Real> attn_;
  FeedForward<Real> ffn_;
};

/// Conformer sandwich:
///   x += 0.5*FFN1(LN x); x += MHSA(LN x); x += ConvModule(LN x);
///   x += 0.5*FFN2(LN x); x = LN(x)
/// ConvModule: pointwise(2d) -> GLU -> depthwise(kernel) -> batchnorm ->
/// swish -> pointwise(d) -> dropout.
template <typename Real>
class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(ParameterStore<Real>& store, const std::string& prefix, const ContextConfig& cfg,
                 Rng& rng)
      : dropout_(static_cast<Real>(cfg.dropout)), dim_(cfg.model_dim) {
    ffn1_ = FeedForward<Real>(store, prefix + ".ffn1", cfg.model_dim, cfg.ffn(),
                              FeedForward<Real>::Act::swish, rng);
    ffn2_ = FeedForward<Real>(store, prefix + ".ffn2", cfg.model_dim, cfg.ffn(),
                              FeedForward<Real>::Act::swish, rng);
    ln_ffn1_ = LayerNorm<Real>(store, prefix + ".ln_ffn1", cfg.model_dim);
    ln_attn_ = LayerNorm<Real>(store, prefix + ".ln_attn", cfg.model_dim);
    ln_conv_ = LayerNorm<Real>(store, prefix + ".ln_conv", cfg.model_dim);
    ln_ffn2_ = LayerNorm<Real>(store, prefix + ".ln_ffn2", cfg.model_dim);
    ln_final_ = LayerNorm<Real>(store, prefix + ".ln_final", cfg.model_dim);
    attn_ = MultiHeadAttention<Real>(store, prefix + ".attn", cfg.model_dim, cfg.num_heads, rng);
    pw1_ = Linear<Real>(store, prefix + ".conv.pw1", cfg.model_dim, 2 * cfg.model_dim, rng);
    pw2_ = Linear<Real>(store, prefix + ".conv.pw2", cfg.model_dim, cfg.model_dim, rng);
    dw_weight_ = store.create(prefix + ".conv.dw.weight",
                              scaled_normal_init<Real>({cfg.model_dim, 1, cfg.depthwise_kernel},
                                                       cfg.depthwise_kernel, rng));
    dw_bias_ = store.create(prefix + ".conv.dw.bias", Tensor<Real>::zeros({cfg.model_dim}));
    bn_ = BatchNorm<Real>(store, prefix + ".conv.bn", cfg.model_dim);
  }

  Tensor<Real> forward(const Tensor<Real>& x, Rng& rng, bool train,
                       std::vector<Tensor<Real>>* attn_out = nullptr) const {
    Tensor<Real> y = add(x, mul_scalar(ffn1_.forward(ln_ffn1_.forward(x), dropout_, rng, train),
                                       Real(0.5)));
    y = add(y, dropout(attn_.forward(ln_attn_.forward(y), attn_out), dropout_, rng, train));
    y = add(y, conv_module(ln_conv_.forward(y), rng, train));
    y = add(y, mul_scalar(ffn2_.forward(ln_ffn2_.forward(y), dropout_, rng, train), Real(0.5)));
    return ln_final_.forward(y);
  }

 private:
  Tensor<Real> conv_module(const Tensor<Real>& x, Rng& rng, bool train) const {
    const std::size_t b = x.dim(0), t = x.dim(1);
    Tensor<Real> h = glu_last(pw1_.forward(x));  // [B, T, d]
    std::vector<Tensor<Real>> rows;
    rows.reserve(b);
    for (std::size_t bi = 0; bi < b; ++bi) {
      Tensor<Real> hb = detail::batch_row(h, bi);
      rows.push_back(add_rowvec(grouped_conv1d_same(hb, dw_weight_, dim_), dw_bias_));
    }
    Tensor<Real> conv = detail::stack_rows(std::move(rows));
    Tensor<Real> flat = reshape(conv, {b * t, dim_});
    Tensor<Real> normed = bn_.forward(flat, train);
    Tensor<Real> out = pw2_.forward(swish(normed));
    return dropout(reshape(out, {b, t, dim_}), dropout_, rng, train);
  }

  Real dropout_ = 0;
  std::size_t dim_ = 0;
  FeedForward<Real> ffn1_, ffn2_;
  LayerNorm<Real> ln_ffn1_, ln_attn_, ln_conv_, ln_ffn2_, ln_final_;
  MultiHeadAttention<Real> attn_;
  Linear<Real> pw1_, pw2_;
  Tensor<Real> dw_weight_, dw_bias_;
  BatchNorm<Real> bn_;
};

/// The full context network g: positional embedding followed by num_blocks
/// blocks of the configured kind. Input and output are [B, T, model_dim].
template <typename Real>
class ContextNetwork {
 public:
  ContextNetwork() = default;
  ContextNetwork(ParameterStore<Real>& store, const std::string& prefix, ContextConfig cfg, Rng& rng)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    pos_ = PositionalEmbed<Real>(store, prefix + ".pos", cfg_, rng);
    for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
      const std::string bp = prefix + ".block" + std::to_string(i);
      if (cfg_.kind == ContextKind::transformer) {
        tblocks_.emplace_back(store, bp, cfg_, rng);
      } else {
        cblocks_.emplace_back(store, bp, cfg_, rng);
      }
    }
  }

  const ContextConfig& config() const { return cfg_; }

  Tensor<Real> forward(const Tensor<Real>& x, Rng& rng, bool train,
                       std::vector<Tensor<Real>>* attn_out = nullptr) const {
    if (x.rank() != 3 || x.dim(2) != cfg_.model_dim) {
      throw ShapeError("contextualize: expected [B,T," + std::to_string(cfg_.model_dim) + "], got " +
                       shape_str(x.shape()));
    }
    Tensor<Real> y = pos_.forward(x);
    for (const auto& blk : tblocks_) y = blk.forward(y, rng, train, attn_out);
    for (const auto& blk : cblocks_) y = blk.forward(y, rng, train, attn_out);
    return y;
  }

 private:
  ContextConfig cfg_;
  PositionalEmbed<Real> pos_;
  std::vector<TransformerBlock<Real>> tblocks_;
  std::vector<ConformerBlock<Real>> cblocks_;
};

}  // namespace wavssl
