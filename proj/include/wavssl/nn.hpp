// wavssl/nn.hpp
//
// Thin layer wrappers that own named parameters in a ParameterStore and
// compose the ops.hpp primitives.

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

#include "wavssl/ops.hpp"
#include "wavssl/tensor.hpp"

namespace wavssl {

template <typename Real>
Tensor<Real> scaled_normal_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const Real stddev = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  return Tensor<Real>::randn(std::move(shape), rng, stddev);
}

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<Real>& store, const std::string& prefix, std::size_t in_dim,
         std::size_t out_dim, Rng& rng, bool bias = true)
      : in_dim_(in_dim), out_dim_(out_dim), has_bias_(bias) {
    weight_ = store.create(prefix + ".weight", scaled_normal_init<Real>({in_dim, out_dim}, in_dim, rng));
    if (bias) bias_ = store.create(prefix + ".bias", Tensor<Real>::zeros({out_dim}));
  }

  /// x [..., in_dim] -> [..., out_dim]; leading axes are flattened for the
  /// matmul and restored afterwards.
  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t rows = x.size() / in_dim_;
    if (x.shape().back() != in_dim_) {
      throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                       std::to_string(in_dim_));
    }
    Tensor<Real> flat = x.rank() == 2 ? x : reshape(x, {rows, in_dim_});
    Tensor<Real> y = matmul(flat, weight_);
    if (has_bias_) y = add_rowvec(y, bias_);
    if (x.rank() != 2) {
      Shape out_shape = x.shape();
      out_shape.back() = out_dim_;
      y = reshape(y, std::move(out_shape));
    }
    return y;
  }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }

 private:
  std::size_t in_dim_ = 0, out_dim_ = 0;
  bool has_bias_ = true;
  Tensor<Real> weight_, bias_;
};

template <typename Real>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim) : dim_(dim) {
    gamma_ = store.create(prefix + ".gamma", Tensor<Real>::full({dim}, Real(1)));
    beta_ = store.create(prefix + ".beta", Tensor<Real>::zeros({dim}));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  std::size_t dim_ = 0;
  Tensor<Real> gamma_, beta_;
};

/// Batch norm over rows of [N, d] with running statistics kept as store
/// buffers. Running variance follows the unbiased convention.
template <typename Real>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
            Real momentum = Real(0.1))
      : store_(&store), dim_(dim), momentum_(momentum),
        mean_name_(prefix + ".running_mean"), var_name_(prefix + ".running_var") {
    gamma_ = store.create(prefix + ".gamma", Tensor<Real>::full({dim}, Real(1)));
    beta_ = store.create(prefix + ".beta", Tensor<Real>::zeros({dim}));
    store.buffer(mean_name_, dim, Real(0));
    store.buffer(var_name_, dim, Real(1));
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool train) const {
    if (train) {
      BatchStats<Real> stats;
      Tensor<Real> y = batch_norm_train(x, gamma_, beta_, &stats);
      auto& rm = store_->buffer(mean_name_);
      auto& rv = store_->buffer(var_name_);
      const std::size_t n = x.dim(0);
      const Real unbias = static_cast<Real>(n) / static_cast<Real>(n - 1);
      for (std::size_t j = 0; j < dim_; ++j) {
        rm[j] = (Real(1) - momentum_) * rm[j] + momentum_ * stats.mean[j];
        rv[j] = (Real(1) - momentum_) * rv[j] + momentum_ * stats.var[j] * unbias;
      }
      return y;
    }
    return batch_norm_eval(x, gamma_, beta_, store_->buffer(mean_name_), store_->buffer(var_name_));
  }

 private:
  ParameterStore<Real>* store_ = nullptr;
  std::size_t dim_ = 0;
  Real momentum_ = Real(0.1);
  std::string mean_name_, var_name_;
  Tensor<Real> gamma_, beta_;
};

}  // namespace wavssl
