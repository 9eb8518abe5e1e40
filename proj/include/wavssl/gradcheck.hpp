// wavssl/gradcheck.hpp
//
// Central-difference verification of analytic gradients. This is the oracle
// every layer is accepted against, so it must stay independent of the
// backward implementations: it only re-runs forward passes.

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
#include <cstring>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "wavssl/tensor.hpp"

namespace wavssl {

template <typename Real>
struct GradCheckResult {
  double max_rel_err = 0.0;
  /// True when some ReLU input sat within the kink margin, i.e. the numeric
  /// estimate straddles a non-differentiable point and the case should be
  /// resampled rather than judged.
  bool kink_risk = false;
};

namespace detail {

template <typename Real>
bool relu_kink_near(const Tensor<Real>& loss, double margin) {
  using Node = TensorNode<Real>;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (std::strcmp(n->op, "relu") == 0) {
      for (const Real x : n->parents[0]->value) {
        if (std::abs(static_cast<double>(x)) < margin) return true;
      }
    }
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  return false;
}

}  // namespace detail

/// Checks d loss / d leaf for every element of every leaf against central
/// differences. `forward` must rebuild the graph from the leaves' current
/// values (and be deterministic; seed any internal RNG per call).
template <typename Real>
GradCheckResult<Real> gradient_check(const std::function<Tensor<Real>()>& forward,
                                     std::vector<Tensor<Real>> leaves, double eps = 1e-5) {
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) {
      throw ContractError("gradient_check: leaf without requires_grad");
    }
    leaf.zero_grad();
  }
  Tensor<Real> loss = forward();
  if (loss.size() != 1) {
    throw ContractError("gradient_check: forward() must return a scalar loss");
  }
  GradCheckResult<Real> result;
  result.kink_risk = detail::relu_kink_near(loss, 4.0 * eps);
  backward(loss);
  std::vector<std::vector<Real>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const Real saved = vals[i];
      vals[i] = saved + static_cast<Real>(eps);
      const double lp = static_cast<double>(forward().item());
      vals[i] = saved - static_cast<Real>(eps);
      const double lm = static_cast<double>(forward().item());
      vals[i] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[li][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
    }
  }
  return result;
}

/// One named case of the gradcheck suite. `make` builds a forward closure and
/// its leaves from a seed; cases flagged with kink risk are re-seeded.
struct GradCase {
  std::string name;
  double tolerance = 1e-4;
  std::function<GradCheckResult<double>(std::uint64_t seed)> run;
};

struct GradCaseOutcome {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline GradCaseOutcome run_grad_case(const GradCase& c, std::uint64_t seed = 1) {
  GradCheckResult<double> r;
  for (int attempt = 0; attempt < 16; ++attempt) {
    r = c.run(seed + static_cast<std::uint64_t>(attempt) * 7919);
    if (!r.kink_risk) break;
  }
  return GradCaseOutcome{c.name, r.max_rel_err, c.tolerance, r.max_rel_err < c.tolerance};
}

}  // namespace wavssl
