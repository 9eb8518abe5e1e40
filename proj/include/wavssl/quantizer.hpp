// wavssl/quantizer.hpp
//
// Product quantization of latent frames: per group, Gumbel-softmax selection
// over V codebook entries with a straight-through estimator, plus the
// codebook-perplexity diversity objective and temperature annealing.

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

struct QuantizerConfig {
  std::size_t num_groups = 2;        // G
  std::size_t entries_per_group = 320;  // V
  std::size_t code_dim = 0;          // per group; 0 means output_dim / num_groups
  double temp_start = 2.0;
  double temp_floor = 0.5;
  double temp_decay = 0.999995;
  double diversity_weight = 0.1;     // alpha

  std::size_t effective_code_dim(std::size_t output_dim) const {
    return code_dim == 0 ? output_dim / num_groups : code_dim;
  }

  void validate() const {
    if (num_groups < 1) throw ContractError("quantizer: need at least one group");
    if (entries_per_group < 2) throw ContractError("quantizer: need at least two entries per group");
    if (temp_start <= 0 || temp_floor <= 0 || temp_floor > temp_start) {
      throw ContractError("quantizer: temperatures must satisfy 0 < floor <= start");
    }
    if (temp_decay <= 0 || temp_decay > 1) {
      throw ContractError("quantizer: decay must be in (0, 1]");
    }
  }
};

/// max(floor, start * decay^step).
inline double anneal_temperature(const QuantizerConfig& cfg, std::size_t step) {
  return std::max(cfg.temp_floor, cfg.temp_start * std::pow(cfg.temp_decay, static_cast<double>(step)));
}

enum class QuantizeMode {
  train,  // Gumbel noise, straight-through hard forward
  eval,   // deterministic argmax, no noise
  soft,   // no straight-through; the differentiable path gradcheck verifies
};

template <typename Real>
struct QuantizeOutput {
  /// Concatenated per-group codebook rows, [N, G*code_dim]. Exactly codebook
  /// rows in train/eval modes (hard selection forward).
  Tensor<Real> q;
  /// q linearly projected into the contrastive space, [N, output_dim].
  Tensor<Real> q_projected;
  /// Noise-free soft assignments softmax(logits), [N, G, V]; feeds the
  /// diversity objective.
  Tensor<Real> probs;
  /// Hard code choice per (frame, group), [N*G]; diagnostic.
  std::vector<std::size_t> indices;
};

template <typename Real>
struct DiversityResult {
  Tensor<Real> loss;                // sum over groups of (V - perplexity)/V
  std::vector<double> perplexity;   // per group
};

/// exp(entropy) of the mean assignment per group, and the diversity loss it
/// induces. `probs` is [N, G, V].
template <typename Real>
DiversityResult<Real> codebook_perplexity(const Tensor<Real>& probs) {
  if (probs.rank() != 3) {
    throw ShapeError("codebook_perplexity: expected [N,G,V], got " + shape_str(probs.shape()));
  }
  const std::size_t g = probs.dim(1), v = probs.dim(2);
  Tensor<Real> mean = mean_axis0(probs);                      // [G, V]
  Tensor<Real> plogp = mul(mean, log(mean));                  // [G, V]
  Tensor<Real> ent = neg(reshape(matmul(plogp, Tensor<Real>::full({v, 1}, Real(1))), {g}));  // [G]
  Tensor<Real> perp = exp(ent);                               // [G]
  Tensor<Real> loss = mul_scalar(add_scalar(neg(perp), static_cast<Real>(v)),
                                 Real(1) / static_cast<Real>(v));
  DiversityResult<Real> out;
  out.loss = sum_all(loss);
  out.perplexity.assign(perp.values().begin(), perp.values().end());
  return out;
}

template <typename Real>
class Quantizer {
 public:
  Quantizer() = default;

  Quantizer(ParameterStore<Real>& store, const std::string& prefix, QuantizerConfig cfg,
            std::size_t input_dim, std::size_t output_dim, Rng& rng)
      : cfg_(std::move(cfg)), input_dim_(input_dim), output_dim_(output_dim) {
    cfg_.validate();
    code_dim_ = cfg_.effective_code_dim(output_dim);
    if (code_dim_ == 0) throw ContractError("quantizer: zero code dimension");
    weight_proj_ = Linear<Real>(store, prefix + ".weight_proj", input_dim,
                                cfg_.num_groups * cfg_.entries_per_group, rng);
    for (std::size_t gi = 0; gi < cfg_.num_groups; ++gi) {
      codebooks_.push_back(store.create(
          prefix + ".codebook" + std::to_string(gi),
          scaled_normal_init<Real>({cfg_.entries_per_group, code_dim_}, code_dim_, rng)));
    }
    out_proj_ = Linear<Real>(store, prefix + ".out_proj", cfg_.num_groups * code_dim_, output_dim, rng);
  }

  const QuantizerConfig& config() const { return cfg_; }
  std::size_t code_dim() const { return code_dim_; }

  /// z [N, input_dim] -> quantized targets.
  QuantizeOutput<Real> forward(const Tensor<Real>& z, double temperature, QuantizeMode mode,
                               Rng& rng) const {
    if (temperature <= 0) {
      throw ContractError("quantize: temperature must be positive, got " + std::to_string(temperature));
    }
    if (z.rank() != 2 || z.dim(1) != input_dim_) {
      throw ShapeError("quantize: expected [N," + std::to_string(input_dim_) + "], got " +
                       shape_str(z.shape()));
    }
    const std::size_t n = z.dim(0);
    const std::size_t g = cfg_.num_groups, v = cfg_.entries_per_group;
    Tensor<Real> logits = reshape(weight_proj_.forward(z), {n * g, v});

    QuantizeOutput<Real> out;
    out.probs = reshape(softmax_last(logits), {n, g, v});

    Tensor<Real> assign;  // [N*G, V]; rows select codebook entries
    if (mode == QuantizeMode::eval) {
      out.indices = argmax_last(logits);
      std::vector<Real> onehot(n * g * v, Real(0));
      for (std::size_t r = 0; r < n * g; ++r) onehot[r * v + out.indices[r]] = Real(1);
      assign = Tensor<Real>::from({n * g, v}, std::move(onehot));
    } else {
      std::vector<Real> noise(n * g * v);
      for (auto& x : noise) x = static_cast<Real>(rng.gumbel());
      Tensor<Real> noisy = add(logits, Tensor<Real>::from({n * g, v}, std::move(noise)));
      Tensor<Real> soft = softmax_last(mul_scalar(noisy, static_cast<Real>(1.0 / temperature)));
      out.indices = argmax_last(soft);
      if (mode == QuantizeMode::train) {
        std::vector<Real> onehot(n * g * v, Real(0));
        for (std::size_t r = 0; r < n * g; ++r) onehot[r * v + out.indices[r]] = Real(1);
        assign = straight_through(soft, std::move(onehot));
      } else {
        assign = soft;  // QuantizeMode::soft
      }
    }

    std::vector<Tensor<Real>> codes;
    codes.reserve(g);
    for (std::size_t gi = 0; gi < g; ++gi) {
      Tensor<Real> rows = slice(assign, 0, gi, n, g);  // this group's N rows
      codes.push_back(matmul(rows, codebooks_[gi]));   // [N, code_dim]
    }
    out.q = concat(codes, 1);                          // [N, G*code_dim]
    out.q_projected = out_proj_.forward(out.q);
    return out;
  }

 private:
  QuantizerConfig cfg_;
  std::size_t input_dim_ = 0, output_dim_ = 0, code_dim_ = 0;
  Linear<Real> weight_proj_;
  std::vector<Tensor<Real>> codebooks_;
  Linear<Real> out_proj_;
};

}  // namespace wavssl
