// wavssl/encoder.hpp
//
// Convolutional feature encoder mapping a waveform to latent frames at
// roughly 49 Hz (25 ms windows, 20 ms hop at 16 kHz). The final layers can be
// swapped for lightweight or dynamic convolutions: a GLU-gated input
// projection, a softmax-normalized depthwise convolution that keeps the
// kernel/stride of the layer it replaces, and an output projection. Replaced
// layers are widened so the parameter count stays close to the baseline.

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

#include <string>
#include <vector>

#include "wavssl/nn.hpp"
#include "wavssl/ops.hpp"
#include "wavssl/rng.hpp"
#include "wavssl/tensor.hpp"

namespace wavssl {

enum class ConvKind { standard, lightweight, dynamic };

struct ConvLayerSpec {
  ConvKind kind = ConvKind::standard;
  std::size_t out_channels = 512;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t heads = 8;       // lightweight/dynamic only
  std::size_t group_size = 0;  // m; 0 means conv_dim / heads
  double dropout = 0.1;        // DropConnect on normalized kernels
  bool bias = false;           // standard conv bias

  /// Light/dyn layers run their depthwise conv at half width (GLU gate).
  std::size_t conv_dim() const { return out_channels / 2; }
  std::size_t effective_group_size() const {
    return group_size == 0 ? conv_dim() / heads : group_size;
  }
};

struct EncoderConfig {
  std::vector<ConvLayerSpec> layers;
  bool group_norm_first = true;  // per-channel norm after the first layer

  std::size_t output_dim() const { return layers.back().out_channels; }

  std::size_t cumulative_stride() const {
    std::size_t s = 1;
    for (const auto& l : layers) s *= l.stride;
    return s;
  }

  std::size_t receptive_field() const {
    std::size_t rf = 1, jump = 1;
    for (const auto& l : layers) {
      rf += (l.kernel - 1) * jump;
      jump *= l.stride;
    }
    return rf;
  }

  /// Closed-form output length: floor((L-k)/s)+1 chained over the stack.
  /// Replaced layers keep the kernel/stride of the originals, so this holds
  /// for every layer kind.
  std::size_t output_length(std::size_t input_len) const {
    std::size_t t = input_len;
    for (const auto& l : layers) {
      if (t < l.kernel) {
        throw ContractError("encode: input of " + std::to_string(input_len) +
                            " samples is shorter than the receptive field (minimum " +
                            std::to_string(receptive_field()) + ")");
      }
      t = (t - l.kernel) / l.stride + 1;
    }
    return t;
  }

  void validate() const {
    if (layers.empty()) throw ContractError("encoder: no layers");
    for (const auto& l : layers) {
      if (l.kind != ConvKind::standard) {
        if (l.out_channels % 2 != 0) {
          throw ContractError("encoder: light/dyn layer width must be even (GLU gate)");
        }
        const std::size_t d = l.conv_dim();
        const std::size_t m = l.effective_group_size();
        if (l.heads == 0 || d % l.heads != 0) {
          throw ContractError("encoder: conv width " + std::to_string(d) +
                              " not divisible by heads " + std::to_string(l.heads));
        }
        if (m == 0 || d % m != 0 || d / m != l.heads) {
          throw ContractError("encoder: group size " + std::to_string(m) +
                              " inconsistent with width " + std::to_string(d) + " and heads " +
                              std::to_string(l.heads));
        }
      }
    }
  }
};

/// Full-scale stack: 7 layers, 512 channels, kernels (10,3,3,3,3,2,2),
/// strides (5,2,2,2,2,2,2); cumulative stride 320, receptive field 400.
/// k_tail in {0,2,4} replaces the last layers with the given kind, widening
/// the replaced layers to 640 (k_tail=2) or 608 (k_tail=4).
inline EncoderConfig build_encoder(std::size_t k_tail, ConvKind tail_kind = ConvKind::lightweight) {
  if (k_tail != 0 && k_tail != 2 && k_tail != 4) {
    throw ContractError("build_encoder: k_tail must be 0, 2 or 4, got " + std::to_string(k_tail));
  }
  if (k_tail > 0 && tail_kind == ConvKind::standard) {
    throw ContractError("build_encoder: tail kind must be lightweight or dynamic");
  }
  const std::size_t kernels[7] = {10, 3, 3, 3, 3, 2, 2};
  const std::size_t strides[7] = {5, 2, 2, 2, 2, 2, 2};
  const std::size_t widened = k_tail == 2 ? 640 : 608;
  EncoderConfig cfg;
  for (std::size_t i = 0; i < 7; ++i) {
    ConvLayerSpec l;
    l.kernel = kernels[i];
    l.stride = strides[i];
    if (k_tail > 0 && i >= 7 - k_tail) {
      l.kind = tail_kind;
      l.out_channels = widened;
      l.heads = 8;
      l.dropout = 0.1;
    } else {
      l.kind = ConvKind::standard;
      l.out_channels = 512;
    }
    cfg.layers.push_back(l);
  }
  cfg.validate();
  return cfg;
}

/// Small stack for CPU tests: strides (5,4,2), kernels (10,8,4).
inline EncoderConfig toy_encoder(std::size_t channels = 32) {
  EncoderConfig cfg;
  const std::size_t kernels[3] = {10, 8, 4};
  const std::size_t strides[3] = {5, 4, 2};
  for (std::size_t i = 0; i < 3; ++i) {
    ConvLayerSpec l;
    l.kind = ConvKind::standard;
    l.out_channels = channels;
    l.kernel = kernels[i];
    l.stride = strides[i];
    cfg.layers.push_back(l);
  }
  cfg.validate();
  return cfg;
}

/// Exact trainable scalar count of an encoder built from `cfg`.
inline std::size_t count_parameters(const EncoderConfig& cfg, std::size_t in_channels = 1) {
  cfg.validate();
  std::size_t count = 0;
  std::size_t in_ch = in_channels;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    if (l.kind == ConvKind::standard) {
      count += l.out_channels * in_ch * l.kernel;
      if (l.bias) count += l.out_channels;
    } else {
      const std::size_t d = l.conv_dim();
      count += in_ch * l.out_channels + l.out_channels;  // gated input projection
      count += l.heads * l.kernel;                       // shared kernels
      if (l.kind == ConvKind::dynamic) count += d * l.heads * l.kernel + l.heads * l.kernel;
      count += d * l.out_channels + l.out_channels;      // output projection
    }
    if (i == 0 && cfg.group_norm_first) count += 2 * l.out_channels;
    in_ch = l.out_channels;
  }
  return count;
}

namespace detail {

inline std::vector<std::size_t> head_index_per_channel(std::size_t d, std::size_t m) {
  std::vector<std::size_t> idx(d);
  for (std::size_t c = 0; c < d; ++c) idx[c] = c / m;
  return idx;
}

/// Shared combine step: out[t,c] = sum_k w_k(t, head(c)) * window_k(x)[t,c].
/// `weights` is [H,K] (shared across time) or [T_out, H, K] (per timestep).
template <typename Real>
Tensor<Real> lightdyn_apply(const Tensor<Real>& x, const Tensor<Real>& weights, std::size_t m,
                            std::size_t kernel, std::size_t stride, bool same_pad) {
  const std::size_t t_in = x.dim(0), d = x.dim(1);
  const bool per_timestep = weights.rank() == 3;
  Tensor<Real> src = same_pad ? pad_axis(x, 0, (kernel - 1) / 2, kernel / 2) : x;
  const std::size_t t_out = same_pad ? t_in : (t_in - kernel) / stride + 1;
  const auto idx = head_index_per_channel(d, m);
  Tensor<Real> out;
  for (std::size_t k = 0; k < kernel; ++k) {
    Tensor<Real> window = slice(src, 0, k, t_out, same_pad ? 1 : stride);
    Tensor<Real> term;
    if (per_timestep) {
      Tensor<Real> wk = reshape(slice(weights, 2, k, 1), {t_out, d / m});
      term = mul(window, gather_last(wk, idx));
    } else {
      Tensor<Real> wk = reshape(slice(weights, 1, k, 1), {d / m});
      term = mul_rowvec(window, gather_last(wk, idx));
    }
    out = k == 0 ? term : add(out, term);
  }
  return out;
}

}  // namespace detail

/// Lightweight convolution over [T, d]: kernel weights softmax-normalized
/// over the kernel axis per head, shared over groups of m channels, applied
/// depthwise with symmetric zero padding (output is again [T, d]). In train
/// mode, dropout acts on the normalized weights (DropConnect).
template <typename Real>
Tensor<Real> lightweight_conv(const Tensor<Real>& x, const Tensor<Real>& raw_weights, std::size_t m,
                              Real weight_dropout = Real(0), Rng* rng = nullptr, bool train = false) {
  if (x.rank() != 2) throw ShapeError("lightweight_conv: expected [T,d], got " + shape_str(x.shape()));
  if (raw_weights.rank() != 2) {
    throw ShapeError("lightweight_conv: weights must be [H,K], got " + shape_str(raw_weights.shape()));
  }
  const std::size_t d = x.dim(1), h = raw_weights.dim(0);
  if (m == 0 || d % m != 0 || d / m != h) {
    throw ShapeError("lightweight_conv: d=" + std::to_string(d) + " m=" + std::to_string(m) +
                     " does not give " + std::to_string(h) + " heads");
  }
  Tensor<Real> wn = softmax_last(raw_weights);
  if (train && weight_dropout > Real(0)) {
    if (!rng) throw ContractError("lightweight_conv: dropout requires an rng in train mode");
    wn = dropout(wn, weight_dropout, *rng, true);
  }
  return detail::lightdyn_apply(x, wn, m, raw_weights.dim(1), 1, true);
}

/// Dynamic convolution: per-timestep raw kernels come from a linear
/// projection of that timestep's input, then are normalized and applied
/// exactly like lightweight_conv.
template <typename Real>
Tensor<Real> dynamic_conv(const Tensor<Real>& x, const Linear<Real>& kernel_proj, std::size_t m,
                          std::size_t kernel, Real weight_dropout = Real(0), Rng* rng = nullptr,
                          bool train = false) {
  if (x.rank() != 2) throw ShapeError("dynamic_conv: expected [T,d], got " + shape_str(x.shape()));
  const std::size_t t = x.dim(0), d = x.dim(1);
  const std::size_t h = d / m;
  if (m == 0 || d % m != 0 || kernel_proj.out_dim() != h * kernel) {
    throw ShapeError("dynamic_conv: projection output " + std::to_string(kernel_proj.out_dim()) +
                     " does not match heads*kernel");
  }
  Tensor<Real> raw = kernel_proj.forward(x);                       // [T, H*K]
  Tensor<Real> wn = softmax_last(reshape(raw, {t * h, kernel}));   // softmax over the kernel axis
  if (train && weight_dropout > Real(0)) {
    if (!rng) throw ContractError("dynamic_conv: dropout requires an rng in train mode");
    wn = dropout(wn, weight_dropout, *rng, true);
  }
  return detail::lightdyn_apply(x, reshape(wn, {t, h, kernel}), m, kernel, 1, true);
}

/// Latent frame sequence produced by the encoder.
template <typename Real>
struct FrameSequence {
  Tensor<Real> frames;  // [T, d]
  double frame_rate = 0.0;
};

template <typename Real>
class FeatureEncoder {
 public:
  FeatureEncoder() = default;

  FeatureEncoder(ParameterStore<Real>& store, const std::string& prefix, EncoderConfig cfg,
                 Rng& rng)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
      const auto& spec = cfg_.layers[i];
      const std::string lp = prefix + ".conv" + std::to_string(i);
      Layer layer;
      if (spec.kind == ConvKind::standard) {
        layer.weight = store.create(
            lp + ".weight",
            scaled_normal_init<Real>({spec.out_channels, in_ch, spec.kernel}, in_ch * spec.kernel, rng));
        if (spec.bias) layer.bias = store.create(lp + ".bias", Tensor<Real>::zeros({spec.out_channels}));
      } else {
        const std::size_t d = spec.conv_dim();
        layer.in_proj = Linear<Real>(store, lp + ".in_proj", in_ch, spec.out_channels, rng);
        layer.kernels = store.create(lp + ".kernels", Tensor<Real>::zeros({spec.heads, spec.kernel}));
        if (spec.kind == ConvKind::dynamic) {
          layer.kernel_proj = Linear<Real>(store, lp + ".kernel_proj", d, spec.heads * spec.kernel, rng);
        }
        layer.out_proj = Linear<Real>(store, lp + ".out_proj", d, spec.out_channels, rng);
      }
      if (i == 0 && cfg_.group_norm_first) {
        layer.gn_gamma = store.create(lp + ".gn.gamma", Tensor<Real>::full({spec.out_channels}, Real(1)));
        layer.gn_beta = store.create(lp + ".gn.beta", Tensor<Real>::zeros({spec.out_channels}));
      }
      layers_.push_back(std::move(layer));
      in_ch = spec.out_channels;
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t min_input_length() const { return cfg_.receptive_field(); }

  /// waveform [L] -> frames [T, d].
  FrameSequence<Real> forward(const Tensor<Real>& waveform, Rng& rng, bool train) const {
    if (waveform.rank() != 1) {
      throw ShapeError("encode: expected a rank-1 waveform, got " + shape_str(waveform.shape()));
    }
    const std::size_t len = waveform.dim(0);
    if (len < cfg_.receptive_field()) {
      throw ContractError("encode: input of " + std::to_string(len) +
                          " samples is shorter than the receptive field (minimum " +
                          std::to_string(cfg_.receptive_field()) + ")");
    }
    Tensor<Real> x = reshape(waveform, {1, len});  // [C, T] channel-major
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& spec = cfg_.layers[i];
      const auto& layer = layers_[i];
      if (spec.kind == ConvKind::standard) {
        x = conv1d_valid(x, layer.weight, spec.stride);
        if (spec.bias) x = add_channel_bias(x, layer.bias);
        if (i == 0 && cfg_.group_norm_first) {
          x = group_norm_channels(x, layer.gn_gamma, layer.gn_beta);
        }
        x = gelu(x);
      } else {
        Tensor<Real> t = transpose2d(x);                 // [T, C]
        t = glu_last(layer.in_proj.forward(t));          // [T, conv_dim]
        const std::size_t m = spec.effective_group_size();
        Tensor<Real> wn;
        if (spec.kind == ConvKind::lightweight) {
          wn = softmax_last(layer.kernels);
        } else {
          // kernels come from the first sample of each strided window
          const std::size_t t_out = (t.dim(0) - spec.kernel) / spec.stride + 1;
          Tensor<Real> anchors = slice(t, 0, 0, t_out, spec.stride);
          Tensor<Real> raw = layer.kernel_proj.forward(anchors);
          wn = reshape(softmax_last(reshape(raw, {t_out * spec.heads, spec.kernel})),
                       {t_out, spec.heads, spec.kernel});
        }
        if (train && spec.dropout > 0) {
          wn = dropout(wn, static_cast<Real>(spec.dropout), rng, true);
        }
        t = detail::lightdyn_apply(t, wn, m, spec.kernel, spec.stride, false);
        t = gelu(layer.out_proj.forward(t));
        if (i == 0 && cfg_.group_norm_first) {
          x = group_norm_channels(transpose2d(t), layer.gn_gamma, layer.gn_beta);
        } else {
          x = transpose2d(t);
        }
      }
    }
    FrameSequence<Real> out;
    out.frames = transpose2d(x);
    out.frame_rate = 0.0;  // set by callers that know the sample rate
    return out;
  }

 private:
  struct Layer {
    Tensor<Real> weight, bias;          // standard
    Linear<Real> in_proj, out_proj;     // light/dyn
    Tensor<Real> kernels;               // lightweight raw weights [H, K]
    Linear<Real> kernel_proj;           // dynamic
    Tensor<Real> gn_gamma, gn_beta;     // first-layer group norm
  };

  EncoderConfig cfg_;
  std::vector<Layer> layers_;
};

}  // namespace wavssl
