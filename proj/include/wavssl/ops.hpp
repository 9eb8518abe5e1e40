// wavssl/ops.hpp
//
// Forward/backward primitive catalogue for the autodiff substrate. Every op
// creates a fresh node; adjoints accumulate into parents. Broadcasting is
// limited to what the model needs: same-shape, scalar, and last-axis vector.

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
#include <cstddef>
#include <string>
#include <vector>

#include "wavssl/tensor.hpp"

namespace wavssl {

template <typename Real>
Tensor<Real> make_op_vec(const char* op, Shape shape, std::vector<Real> value,
                         const std::vector<Tensor<Real>>& parents,
                         std::function<void(TensorNode<Real>&)> backward) {
  detail::check_finite(op, value);
  auto n = std::make_shared<TensorNode<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->seq = detail::next_seq();
  bool needs = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    needs = needs || p.node()->requires_grad;
  }
  n->requires_grad = needs;
  if (needs) n->backward = std::move(backward);
  return Tensor<Real>(std::move(n));
}

namespace detail {

template <typename Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename Real>
std::size_t last_dim(const char* op, const Tensor<Real>& x) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": rank-0 tensor");
  return x.shape().back();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  return make_op<Real>("add", a.shape(), std::move(v), {a, b},
                       [an = a.node(), bn = b.node()](TensorNode<Real>& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                         }
                       });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  return make_op<Real>("sub", a.shape(), std::move(v), {a, b},
                       [an = a.node(), bn = b.node()](TensorNode<Real>& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
                         }
                       });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  return make_op<Real>("mul", a.shape(), std::move(v), {a, b},
                       [an = a.node(), bn = b.node()](TensorNode<Real>& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             an->grad[i] += self.grad[i] * bn->value[i];
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             bn->grad[i] += self.grad[i] * an->value[i];
                         }
                       });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("div", a, b);
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) / b.at(i);
  return make_op<Real>("div", a.shape(), std::move(v), {a, b},
                       [an = a.node(), bn = b.node()](TensorNode<Real>& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             an->grad[i] += self.grad[i] / bn->value[i];
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             bn->grad[i] -= self.grad[i] * self.value[i] / bn->value[i];
                         }
                       });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& x, Real c) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) + c;
  return make_op<Real>("add_scalar", x.shape(), std::move(v), {x},
                       [xn = x.node()](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                       });
}

template <typename Real>
Tensor<Real> mul_scalar(const Tensor<Real>& x, Real c) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * c;
  return make_op<Real>("mul_scalar", x.shape(), std::move(v), {x},
                       [xn = x.node(), c](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
                       });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  return mul_scalar(x, Real(-1));
}

/// x[..., d] + v[d], broadcast over leading axes (bias add).
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& v) {
  const std::size_t d = detail::last_dim("add_rowvec", x);
  if (v.rank() != 1 || v.dim(0) != d) {
    throw ShapeError("add_rowvec: vector shape " + shape_str(v.shape()) +
                     " does not match last axis of " + shape_str(x.shape()));
  }
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + v.at(i % d);
  return make_op<Real>("add_rowvec", x.shape(), std::move(out), {x, v},
                       [xn = x.node(), vn = v.node(), d](TensorNode<Real>& self) {
                         if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                         }
                         if (vn->requires_grad) {
                           vn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) vn->grad[i % d] += self.grad[i];
                         }
                       });
}

/// x[..., d] * v[d] elementwise with last-axis broadcast.
template <typename Real>
Tensor<Real> mul_rowvec(const Tensor<Real>& x, const Tensor<Real>& v) {
  const std::size_t d = detail::last_dim("mul_rowvec", x);
  if (v.rank() != 1 || v.dim(0) != d) {
    throw ShapeError("mul_rowvec: vector shape " + shape_str(v.shape()) +
                     " does not match last axis of " + shape_str(x.shape()));
  }
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * v.at(i % d);
  return make_op<Real>("mul_rowvec", x.shape(), std::move(out), {x, v},
                       [xn = x.node(), vn = v.node(), d](TensorNode<Real>& self) {
                         if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             xn->grad[i] += self.grad[i] * vn->value[i % d];
                         }
                         if (vn->requires_grad) {
                           vn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             vn->grad[i % d] += self.grad[i] * xn->value[i];
                         }
                       });
}

// ---------------------------------------------------------------------------
// Unary maps
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(x.at(i));
  return make_op<Real>("exp", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * self.value[i];
  });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(x.at(i));
  return make_op<Real>("log", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] / xn->value[i];
  });
}

template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(x.at(i));
  return make_op<Real>("sqrt", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * Real(0.5) / self.value[i];
  });
}

/// ReLU; the subgradient at exactly zero is defined as zero.
template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) > Real(0) ? x.at(i) : Real(0);
  return make_op<Real>("relu", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn->value[i] > Real(0)) xn->grad[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = Real(1) / (Real(1) + std::exp(-x.at(i)));
  return make_op<Real>("sigmoid", x.shape(), std::move(v), {x},
                       [xn = x.node()](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           const Real y = self.value[i];
                           xn->grad[i] += self.grad[i] * y * (Real(1) - y);
                         }
                       });
}

/// Exact (erf-based) GELU.
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = static_cast<double>(x.at(i));
    v[i] = static_cast<Real>(xi * 0.5 * (1.0 + std::erf(xi * inv_sqrt2)));
  }
  return make_op<Real>("gelu", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    constexpr double inv_s2 = 0.70710678118654752440;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double xi = static_cast<double>(xn->value[i]);
      const double cdf = 0.5 * (1.0 + std::erf(xi * inv_s2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
      xn->grad[i] += self.grad[i] * static_cast<Real>(cdf + xi * pdf);
    }
  });
}

/// Swish / SiLU: x * sigmoid(x).
template <typename Real>
Tensor<Real> swish(const Tensor<Real>& x) {
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Real s = Real(1) / (Real(1) + std::exp(-x.at(i)));
    v[i] = x.at(i) * s;
  }
  return make_op<Real>("swish", x.shape(), std::move(v), {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const Real xi = xn->value[i];
      const Real s = Real(1) / (Real(1) + std::exp(-xi));
      xn->grad[i] += self.grad[i] * (s + xi * s * (Real(1) - s));
    }
  });
}

/// GLU over the last axis: input [..., 2h] split in half, a * sigmoid(b).
template <typename Real>
Tensor<Real> glu_last(const Tensor<Real>& x) {
  const std::size_t two_h = detail::last_dim("glu", x);
  if (two_h % 2 != 0) {
    throw ShapeError("glu: last axis must be even, got " + shape_str(x.shape()));
  }
  const std::size_t h = two_h / 2;
  const std::size_t rows = x.size() / two_h;
  Shape out_shape = x.shape();
  out_shape.back() = h;
  std::vector<Real> v(rows * h);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < h; ++j) {
      const Real a = x.at(r * two_h + j);
      const Real b = x.at(r * two_h + h + j);
      v[r * h + j] = a / (Real(1) + std::exp(-b));
    }
  }
  return make_op<Real>("glu", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), rows, h, two_h](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < h; ++j) {
                             const Real g = self.grad[r * h + j];
                             const Real a = xn->value[r * two_h + j];
                             const Real b = xn->value[r * two_h + h + j];
                             const Real s = Real(1) / (Real(1) + std::exp(-b));
                             xn->grad[r * two_h + j] += g * s;
                             xn->grad[r * two_h + h + j] += g * a * s * (Real(1) - s);
                           }
                         }
                       });
}

// ---------------------------------------------------------------------------
// Linear algebra and reshaping
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> v(m * n, Real(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = av[i * k + p];
      const Real* brow = &bv[p * n];
      Real* vrow = &v[i * n];
      for (std::size_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  }
  return make_op<Real>("matmul", {m, n}, std::move(v), {a, b},
                       [an = a.node(), bn = b.node(), m, k, n](TensorNode<Real>& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           // dA = G * B^T
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t p = 0; p < k; ++p) {
                               const Real* grow = &self.grad[i * n];
                               const Real* brow = &bn->value[p * n];
                               Real acc = 0;
                               for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                               an->grad[i * k + p] += acc;
                             }
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           // dB = A^T * G
                           for (std::size_t p = 0; p < k; ++p)
                             for (std::size_t i = 0; i < m; ++i) {
                               const Real aip = an->value[i * k + p];
                               const Real* grow = &self.grad[i * n];
                               Real* brow = &bn->grad[p * n];
                               for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
                             }
                         }
                       });
}

template <typename Real>
Tensor<Real> transpose2d(const Tensor<Real>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = x.at(i * n + j);
  return make_op<Real>("transpose", {n, m}, std::move(v), {x},
                       [xn = x.node(), m, n](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             xn->grad[i * n + j] += self.grad[j * m + i];
                       });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<Real> v = x.values();
  return make_op<Real>("reshape", std::move(shape), std::move(v), {x},
                       [xn = x.node()](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                       });
}

namespace detail {

inline void axis_spans(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace detail

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw ShapeError("concat: shape mismatch on axis " + std::to_string(i) + ": " +
                         shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    axis_total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;
  std::size_t outer, inner;
  detail::axis_spans(out_shape, axis, outer, inner);
  std::vector<Real> v(numel(out_shape));
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      offsets[pi] = off;
      const std::size_t len = parts[pi].shape()[axis];
      for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = parts[pi].values().data() + o * len * inner;
        Real* dst = v.data() + (o * axis_total + off) * inner;
        std::copy(src, src + len * inner, dst);
      }
      off += len;
    }
  }
  std::vector<std::shared_ptr<TensorNode<Real>>> pnodes;
  pnodes.reserve(parts.size());
  for (const auto& p : parts) pnodes.push_back(p.node());
  return make_op_vec<Real>(
      "concat", std::move(out_shape), std::move(v), parts,
      [pnodes, offsets, outer, inner, axis_total, axis](TensorNode<Real>& self) {
        for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
          auto& pn = pnodes[pi];
          if (!pn->requires_grad) continue;
          pn->ensure_grad();
          const std::size_t len = pn->shape[axis];
          for (std::size_t o = 0; o < outer; ++o) {
            const Real* src = self.grad.data() + (o * axis_total + offsets[pi]) * inner;
            Real* dst = pn->grad.data() + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Strided slice along one axis: elements start, start+step, ... (len of them).
template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start, std::size_t len,
                   std::size_t step = 1) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  if (step == 0) throw ShapeError("slice: zero step");
  const std::size_t extent = x.shape()[axis];
  if (len > 0 && start + (len - 1) * step >= extent) {
    throw ShapeError("slice: range start=" + std::to_string(start) + " len=" + std::to_string(len) +
                     " step=" + std::to_string(step) + " exceeds axis " + std::to_string(axis) +
                     " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t outer, inner;
  detail::axis_spans(x.shape(), axis, outer, inner);
  std::vector<Real> v(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < len; ++i) {
      const Real* src = x.values().data() + (o * extent + start + i * step) * inner;
      Real* dst = v.data() + (o * len + i) * inner;
      std::copy(src, src + inner, dst);
    }
  }
  return make_op<Real>("slice", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), outer, inner, extent, start, len, step](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < len; ++i) {
                             const Real* src = self.grad.data() + (o * len + i) * inner;
                             Real* dst = xn->grad.data() + (o * extent + start + i * step) * inner;
                             for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
                           }
                         }
                       });
}

/// Zero padding along one axis.
template <typename Real>
Tensor<Real> pad_axis(const Tensor<Real>& x, std::size_t axis, std::size_t left, std::size_t right) {
  if (axis >= x.rank()) throw ShapeError("pad: axis out of range for " + shape_str(x.shape()));
  const std::size_t extent = x.shape()[axis];
  Shape out_shape = x.shape();
  out_shape[axis] = extent + left + right;
  std::size_t outer, inner;
  detail::axis_spans(x.shape(), axis, outer, inner);
  std::vector<Real> v(numel(out_shape), Real(0));
  const std::size_t out_extent = out_shape[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    const Real* src = x.values().data() + o * extent * inner;
    Real* dst = v.data() + (o * out_extent + left) * inner;
    std::copy(src, src + extent * inner, dst);
  }
  return make_op<Real>("pad", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), outer, inner, extent, left, out_extent](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t o = 0; o < outer; ++o) {
                           const Real* src = self.grad.data() + (o * out_extent + left) * inner;
                           Real* dst = xn->grad.data() + o * extent * inner;
                           for (std::size_t i = 0; i < extent * inner; ++i) dst[i] += src[i];
                         }
                       });
}

/// Row gather over axis 0; duplicate indices accumulate in the backward pass.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0) throw ShapeError("gather_rows: rank-0 tensor");
  const std::size_t n = x.dim(0);
  const std::size_t inner = x.size() / n;
  for (std::size_t idx : indices) {
    if (idx >= n) {
      throw ContractError("gather_rows: index " + std::to_string(idx) + " out of range for axis of " +
                          std::to_string(n));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  std::vector<Real> v(indices.size() * inner);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Real* src = x.values().data() + indices[i] * inner;
    std::copy(src, src + inner, v.data() + i * inner);
  }
  return make_op<Real>("gather_rows", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), indices, inner](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < indices.size(); ++i) {
                           const Real* src = self.grad.data() + i * inner;
                           Real* dst = xn->grad.data() + indices[i] * inner;
                           for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
                         }
                       });
}

/// Gather over the last axis: out[..., i] = x[..., idx[i]].
template <typename Real>
Tensor<Real> gather_last(const Tensor<Real>& x, const std::vector<std::size_t>& indices) {
  const std::size_t d = detail::last_dim("gather_last", x);
  for (std::size_t idx : indices) {
    if (idx >= d) {
      throw ContractError("gather_last: index " + std::to_string(idx) + " out of range for axis of " +
                          std::to_string(d));
    }
  }
  const std::size_t rows = x.size() / d;
  const std::size_t m = indices.size();
  Shape out_shape = x.shape();
  out_shape.back() = m;
  std::vector<Real> v(rows * m);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < m; ++i) v[r * m + i] = x.at(r * d + indices[i]);
  return make_op<Real>("gather_last", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), indices, rows, d, m](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < m; ++i)
                             xn->grad[r * d + indices[i]] += self.grad[r * m + i];
                       });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  Real s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.at(i);
  return make_op<Real>("sum", {1}, {s}, {x}, [xn = x.node()](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
  Real s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.at(i);
  const Real inv = Real(1) / static_cast<Real>(x.size());
  return make_op<Real>("mean", {1}, {s * inv}, {x}, [xn = x.node(), inv](TensorNode<Real>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0] * inv;
  });
}

/// Mean over axis 0: [N, rest...] -> [rest...].
template <typename Real>
Tensor<Real> mean_axis0(const Tensor<Real>& x) {
  if (x.rank() < 2) throw ShapeError("mean_axis0: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t inner = x.size() / n;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  std::vector<Real> v(inner, Real(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < inner; ++j) v[j] += x.at(i * inner + j);
  const Real inv = Real(1) / static_cast<Real>(n);
  for (auto& y : v) y *= inv;
  return make_op<Real>("mean_axis0", std::move(out_shape), std::move(v), {x},
                       [xn = x.node(), n, inner, inv](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < inner; ++j)
                             xn->grad[i * inner + j] += self.grad[j] * inv;
                       });
}

// ---------------------------------------------------------------------------
// Softmax family and normalization
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax_last(const Tensor<Real>& x) {
  const std::size_t d = detail::last_dim("softmax", x);
  const std::size_t rows = x.size() / d;
  std::vector<Real> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.values().data() + r * d;
    Real* vr = v.data() + r * d;
    Real mx = xr[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    Real z = 0;
    for (std::size_t j = 0; j < d; ++j) {
      vr[j] = std::exp(xr[j] - mx);
      z += vr[j];
    }
    const Real inv = Real(1) / z;
    for (std::size_t j = 0; j < d; ++j) vr[j] *= inv;
  }
  return make_op<Real>("softmax", x.shape(), std::move(v), {x},
                       [xn = x.node(), rows, d](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const Real* y = self.value.data() + r * d;
                           const Real* g = self.grad.data() + r * d;
                           Real dot = 0;
                           for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                           Real* gx = xn->grad.data() + r * d;
                           for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (g[j] - dot);
                         }
                       });
}

template <typename Real>
Tensor<Real> log_softmax_last(const Tensor<Real>& x) {
  const std::size_t d = detail::last_dim("log_softmax", x);
  const std::size_t rows = x.size() / d;
  std::vector<Real> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.values().data() + r * d;
    Real* vr = v.data() + r * d;
    Real mx = xr[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    Real z = 0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(xr[j] - mx);
    const Real lz = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) vr[j] = xr[j] - lz;
  }
  return make_op<Real>("log_softmax", x.shape(), std::move(v), {x},
                       [xn = x.node(), rows, d](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const Real* y = self.value.data() + r * d;
                           const Real* g = self.grad.data() + r * d;
                           Real gsum = 0;
                           for (std::size_t j = 0; j < d; ++j) gsum += g[j];
                           Real* gx = xn->grad.data() + r * d;
                           for (std::size_t j = 0; j < d; ++j) gx[j] += g[j] - std::exp(y[j]) * gsum;
                         }
                       });
}

/// Layer normalization over the last axis with learned affine.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
  const std::size_t d = detail::last_dim("layer_norm", x);
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: affine size " + std::to_string(gamma.size()) +
                     " does not match feature axis " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  std::vector<Real> v(x.size());
  std::vector<Real> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.values().data() + r * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    Real* vr = v.data() + r * d;
    for (std::size_t j = 0; j < d; ++j)
      vr[j] = (xr[j] - mu) * is * gamma.at(j) + beta.at(j);
  }
  return make_op<Real>(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), rows, d, mean, inv_std](TensorNode<Real>& self) {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* xr = xn->value.data() + r * d;
          const Real* g = self.grad.data() + r * d;
          const Real is = inv_std[r];
          const Real mu = mean[r];
          if (gn->requires_grad || bn->requires_grad) {
            gn->ensure_grad();
            bn->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) {
              const Real xhat = (xr[j] - mu) * is;
              gn->grad[j] += g[j] * xhat;
              bn->grad[j] += g[j];
            }
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            Real sum_gg = 0, sum_ggx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const Real gg = g[j] * gn->value[j];
              const Real xhat = (xr[j] - mu) * is;
              sum_gg += gg;
              sum_ggx += gg * xhat;
            }
            const Real invd = Real(1) / static_cast<Real>(d);
            Real* gx = xn->grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              const Real gg = g[j] * gn->value[j];
              const Real xhat = (xr[j] - mu) * is;
              gx[j] += is * (gg - sum_gg * invd - xhat * sum_ggx * invd);
            }
          }
        }
      });
}

/// Per-channel normalization of a [C, T] map over its time axis (the
/// groups == channels flavor of group norm used on the first encoder layer).
template <typename Real>
Tensor<Real> group_norm_channels(const Tensor<Real>& x, const Tensor<Real>& gamma,
                                 const Tensor<Real>& beta, Real eps = Real(1e-5)) {
  if (x.rank() != 2) throw ShapeError("group_norm: expected [C,T], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), t = x.dim(1);
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("group_norm: affine size " + std::to_string(gamma.size()) +
                     " does not match channels " + std::to_string(c));
  }
  std::vector<Real> v(x.size());
  std::vector<Real> inv_std(c), mean(c);
  for (std::size_t i = 0; i < c; ++i) {
    const Real* xr = x.values().data() + i * t;
    Real mu = 0;
    for (std::size_t j = 0; j < t; ++j) mu += xr[j];
    mu /= static_cast<Real>(t);
    Real var = 0;
    for (std::size_t j = 0; j < t; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Real>(t);
    const Real is = Real(1) / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = is;
    Real* vr = v.data() + i * t;
    for (std::size_t j = 0; j < t; ++j) vr[j] = (xr[j] - mu) * is * gamma.at(i) + beta.at(i);
  }
  return make_op<Real>(
      "group_norm", x.shape(), std::move(v), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), c, t, mean, inv_std](TensorNode<Real>& self) {
        for (std::size_t i = 0; i < c; ++i) {
          const Real* xr = xn->value.data() + i * t;
          const Real* g = self.grad.data() + i * t;
          const Real is = inv_std[i];
          const Real mu = mean[i];
          if (gn->requires_grad || bn->requires_grad) {
            gn->ensure_grad();
            bn->ensure_grad();
            for (std::size_t j = 0; j < t; ++j) {
              gn->grad[i] += g[j] * (xr[j] - mu) * is;
              bn->grad[i] += g[j];
            }
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            Real sum_g = 0, sum_gx = 0;
            for (std::size_t j = 0; j < t; ++j) {
              sum_g += g[j];
              sum_gx += g[j] * (xr[j] - mu) * is;
            }
            const Real invt = Real(1) / static_cast<Real>(t);
            Real* gx = xn->grad.data() + i * t;
            const Real gamma_i = gn->value[i];
            for (std::size_t j = 0; j < t; ++j) {
              const Real xhat = (xr[j] - mu) * is;
              gx[j] += gamma_i * is * (g[j] - sum_g * invt - xhat * sum_gx * invt);
            }
          }
        }
      });
}

/// Batch statistics of the train-mode batch-norm forward, exposed so the
/// owning layer can update its running buffers.
template <typename Real>
struct BatchStats {
  std::vector<Real> mean;
  std::vector<Real> var;  // biased
};

/// Train-mode batch norm over rows of [N, d]; N >= 2 required.
template <typename Real>
Tensor<Real> batch_norm_train(const Tensor<Real>& x, const Tensor<Real>& gamma,
                              const Tensor<Real>& beta, BatchStats<Real>* stats_out,
                              Real eps = Real(1e-5)) {
  if (x.rank() != 2) throw ShapeError("batch_norm: expected [N,d], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) {
    throw ContractError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
  }
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("batch_norm: affine size mismatch with feature axis " + std::to_string(d));
  }
  std::vector<Real> mean(d, Real(0)), var(d, Real(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i * d + j);
  for (auto& m : mean) m /= static_cast<Real>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const Real c = x.at(i * d + j) - mean[j];
      var[j] += c * c;
    }
  for (auto& s : var) s /= static_cast<Real>(n);
  std::vector<Real> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = Real(1) / std::sqrt(var[j] + eps);
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      v[i * d + j] = (x.at(i * d + j) - mean[j]) * inv_std[j] * gamma.at(j) + beta.at(j);
  if (stats_out) {
    stats_out->mean = mean;
    stats_out->var = var;
  }
  return make_op<Real>(
      "batch_norm", x.shape(), std::move(v), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), n, d, mean, inv_std](TensorNode<Real>& self) {
        std::vector<Real> sum_g(d, Real(0)), sum_gx(d, Real(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            const Real g = self.grad[i * d + j];
            const Real xhat = (xn->value[i * d + j] - mean[j]) * inv_std[j];
            sum_g[j] += g;
            sum_gx[j] += g * xhat;
          }
        if (gn->requires_grad || bn->requires_grad) {
          gn->ensure_grad();
          bn->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) {
            gn->grad[j] += sum_gx[j];
            bn->grad[j] += sum_g[j];
          }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const Real invn = Real(1) / static_cast<Real>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const Real g = self.grad[i * d + j];
              const Real xhat = (xn->value[i * d + j] - mean[j]) * inv_std[j];
              xn->grad[i * d + j] += gn->value[j] * inv_std[j] *
                                     (g - sum_g[j] * invn - xhat * sum_gx[j] * invn);
            }
        }
      });
}

/// Eval-mode batch norm: a deterministic affine map using running statistics.
template <typename Real>
Tensor<Real> batch_norm_eval(const Tensor<Real>& x, const Tensor<Real>& gamma,
                             const Tensor<Real>& beta, const std::vector<Real>& running_mean,
                             const std::vector<Real>& running_var, Real eps = Real(1e-5)) {
  if (x.rank() != 2) throw ShapeError("batch_norm: expected [N,d], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d || running_mean.size() != d || running_var.size() != d) {
    throw ShapeError("batch_norm: affine/stat size mismatch with feature axis " + std::to_string(d));
  }
  std::vector<Real> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = Real(1) / std::sqrt(running_var[j] + eps);
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      v[i * d + j] = (x.at(i * d + j) - running_mean[j]) * inv_std[j] * gamma.at(j) + beta.at(j);
  return make_op<Real>(
      "batch_norm_eval", x.shape(), std::move(v), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), n, d, running_mean,
       inv_std](TensorNode<Real>& self) {
        if (gn->requires_grad || bn->requires_grad) {
          gn->ensure_grad();
          bn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const Real xhat = (xn->value[i * d + j] - running_mean[j]) * inv_std[j];
              gn->grad[j] += self.grad[i * d + j] * xhat;
              bn->grad[j] += self.grad[i * d + j];
            }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              xn->grad[i * d + j] += self.grad[i * d + j] * gn->value[j] * inv_std[j];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Valid 1-D convolution (cross-correlation): x [Cin, L] * w [Cout, Cin, K]
/// with stride -> [Cout, floor((L-K)/stride)+1].
template <typename Real>
Tensor<Real> conv1d_valid(const Tensor<Real>& x, const Tensor<Real>& w, std::size_t stride) {
  if (x.rank() != 2) throw ShapeError("conv1d: input must be [Cin,L], got " + shape_str(x.shape()));
  if (w.rank() != 3) throw ShapeError("conv1d: weight must be [Cout,Cin,K], got " + shape_str(w.shape()));
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = w.dim(0), wcin = w.dim(1), k = w.dim(2);
  if (wcin != cin) {
    throw ShapeError("conv1d: weight expects " + std::to_string(wcin) + " input channels, input has " +
                     std::to_string(cin));
  }
  if (stride == 0) throw ShapeError("conv1d: zero stride");
  if (len < k) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(k));
  }
  const std::size_t t_out = (len - k) / stride + 1;
  std::vector<Real> v(cout * t_out, Real(0));
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t co = 0; co < cout; ++co) {
    Real* vrow = &v[co * t_out];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* xrow = &xv[ci * len];
      const Real* wrow = &wv[(co * cin + ci) * k];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real wk = wrow[kk];
        for (std::size_t t = 0; t < t_out; ++t) vrow[t] += wk * xrow[t * stride + kk];
      }
    }
  }
  return make_op<Real>(
      "conv1d", {cout, t_out}, std::move(v), {x, w},
      [xn = x.node(), wn = w.node(), cin, len, cout, k, stride, t_out](TensorNode<Real>& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const Real* grow = &self.grad[co * t_out];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              Real* gx = &xn->grad[ci * len];
              const Real* wrow = &wn->value[(co * cin + ci) * k];
              for (std::size_t kk = 0; kk < k; ++kk) {
                const Real wk = wrow[kk];
                for (std::size_t t = 0; t < t_out; ++t) gx[t * stride + kk] += wk * grow[t];
              }
            }
          }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const Real* grow = &self.grad[co * t_out];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const Real* xrow = &xn->value[ci * len];
              Real* gw = &wn->grad[(co * cin + ci) * k];
              for (std::size_t kk = 0; kk < k; ++kk) {
                Real acc = 0;
                for (std::size_t t = 0; t < t_out; ++t) acc += grow[t] * xrow[t * stride + kk];
                gw[kk] += acc;
              }
            }
          }
        }
      });
}

/// Bias add over the channel axis of a [C, T] map.
template <typename Real>
Tensor<Real> add_channel_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  if (x.rank() != 2) throw ShapeError("channel_bias: expected [C,T], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), t = x.dim(1);
  if (bias.size() != c) {
    throw ShapeError("channel_bias: bias size " + std::to_string(bias.size()) +
                     " does not match channels " + std::to_string(c));
  }
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < t; ++j) v[i * t + j] = x.at(i * t + j) + bias.at(i);
  return make_op<Real>("channel_bias", x.shape(), std::move(v), {x, bias},
                       [xn = x.node(), bn = bias.node(), c, t](TensorNode<Real>& self) {
                         if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < c; ++i)
                             for (std::size_t j = 0; j < t; ++j) bn->grad[i] += self.grad[i * t + j];
                         }
                       });
}

/// Grouped same-padded 1-D convolution over the time axis of [T, d].
/// w is [d, d/groups, K]; groups == d gives a depthwise convolution.
/// Padding is (K-1)/2 left and K/2 right, so T never changes.
template <typename Real>
Tensor<Real> grouped_conv1d_same(const Tensor<Real>& x, const Tensor<Real>& w, std::size_t groups) {
  if (x.rank() != 2) throw ShapeError("grouped_conv1d: input must be [T,d], got " + shape_str(x.shape()));
  if (w.rank() != 3) throw ShapeError("grouped_conv1d: weight must be [d,d/g,K], got " + shape_str(w.shape()));
  const std::size_t t = x.dim(0), d = x.dim(1);
  const std::size_t cout = w.dim(0), cg = w.dim(1), k = w.dim(2);
  if (groups == 0 || d % groups != 0 || cout != d || cg != d / groups) {
    throw ShapeError("grouped_conv1d: weight " + shape_str(w.shape()) + " incompatible with d=" +
                     std::to_string(d) + " groups=" + std::to_string(groups));
  }
  const std::size_t pad_left = (k - 1) / 2;
  const std::size_t outs_per_group = d / groups;
  std::vector<Real> v(x.size(), Real(0));
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t co = 0; co < d; ++co) {
    const std::size_t g = co / outs_per_group;
    for (std::size_t cl = 0; cl < cg; ++cl) {
      const std::size_t ci = g * cg + cl;
      const Real* wrow = &wv[(co * cg + cl) * k];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real wk = wrow[kk];
        // source position tt + kk - pad_left
        for (std::size_t tt = 0; tt < t; ++tt) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + kk) -
                                     static_cast<std::ptrdiff_t>(pad_left);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
          v[tt * d + co] += wk * xv[static_cast<std::size_t>(src) * d + ci];
        }
      }
    }
  }
  return make_op<Real>(
      "grouped_conv1d", x.shape(), std::move(v), {x, w},
      [xn = x.node(), wn = w.node(), t, d, cg, k, pad_left, outs_per_group](TensorNode<Real>& self) {
        for (std::size_t co = 0; co < d; ++co) {
          const std::size_t g = co / outs_per_group;
          for (std::size_t cl = 0; cl < cg; ++cl) {
            const std::size_t ci = g * cg + cl;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const Real wk = wn->value[(co * cg + cl) * k + kk];
              Real wacc = 0;
              for (std::size_t tt = 0; tt < t; ++tt) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + kk) -
                                           static_cast<std::ptrdiff_t>(pad_left);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
                const Real g_out = self.grad[tt * d + co];
                if (xn->requires_grad) {
                  xn->ensure_grad();
                  xn->grad[static_cast<std::size_t>(src) * d + ci] += wk * g_out;
                }
                wacc += g_out * xn->value[static_cast<std::size_t>(src) * d + ci];
              }
              if (wn->requires_grad) {
                wn->ensure_grad();
                wn->grad[(co * cg + cl) * k + kk] += wacc;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Stochastic and miscellaneous ops
// ---------------------------------------------------------------------------

/// Inverted dropout; identity in eval mode or at p == 0.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, Real p, Rng& rng, bool train) {
  if (p < Real(0) || p >= Real(1)) {
    throw ContractError("dropout: p must be in [0,1), got " + std::to_string(static_cast<double>(p)));
  }
  if (!train || p == Real(0)) return x;
  const Real keep = Real(1) - p;
  const Real scale = Real(1) / keep;
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = rng.bernoulli(static_cast<double>(keep)) ? scale : Real(0);
  std::vector<Real> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * mask[i];
  return make_op<Real>("dropout", x.shape(), std::move(v), {x},
                       [xn = x.node(), mask](TensorNode<Real>& self) {
                         xn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           xn->grad[i] += self.grad[i] * mask[i];
                       });
}

/// Straight-through estimator: forward takes `hard_values`, backward passes
/// gradients to `soft` unchanged.
template <typename Real>
Tensor<Real> straight_through(const Tensor<Real>& soft, std::vector<Real> hard_values) {
  if (hard_values.size() != soft.size()) {
    throw ShapeError("straight_through: hard values size " + std::to_string(hard_values.size()) +
                     " does not match " + shape_str(soft.shape()));
  }
  return make_op<Real>("straight_through", soft.shape(), std::move(hard_values), {soft},
                       [sn = soft.node()](TensorNode<Real>& self) {
                         sn->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) sn->grad[i] += self.grad[i];
                       });
}

/// Detached copy; gradients do not flow back.
template <typename Real>
Tensor<Real> detach(const Tensor<Real>& x) {
  return Tensor<Real>::from(x.shape(), x.values(), false);
}

/// Row-wise cosine similarity of [N, d] against [N, d] -> [N]. Rows whose
/// norm product falls below eps get similarity dot/eps (0 for zero vectors).
template <typename Real>
Tensor<Real> cosine_rowwise(const Tensor<Real>& a, const Tensor<Real>& b, Real eps = Real(1e-8)) {
  detail::require_same_shape("cosine", a, b);
  if (a.rank() != 2) throw ShapeError("cosine: expected [N,d], got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<Real> v(n);
  std::vector<Real> dots(n), nas(n), nbs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real dot = 0, na2 = 0, nb2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Real av = a.at(i * d + j), bv = b.at(i * d + j);
      dot += av * bv;
      na2 += av * av;
      nb2 += bv * bv;
    }
    const Real na = std::sqrt(na2), nb = std::sqrt(nb2);
    const Real denom = std::max(na * nb, eps);
    v[i] = dot / denom;
    dots[i] = dot;
    nas[i] = na;
    nbs[i] = nb;
  }
  return make_op<Real>(
      "cosine", {n}, std::move(v), {a, b},
      [an = a.node(), bn = b.node(), n, d, dots, nas, nbs, eps](TensorNode<Real>& self) {
        for (std::size_t i = 0; i < n; ++i) {
          const Real g = self.grad[i];
          if (g == Real(0)) continue;
          const Real na = nas[i], nb = nbs[i];
          const bool clamped = na * nb <= eps;
          const Real denom = clamped ? eps : na * nb;
          const Real c = dots[i] / denom;
          for (std::size_t j = 0; j < d; ++j) {
            const Real av = an->value[i * d + j], bv = bn->value[i * d + j];
            if (an->requires_grad) {
              an->ensure_grad();
              Real da = bv / denom;
              if (!clamped) da -= c * av / (na * na);
              an->grad[i * d + j] += g * da;
            }
            if (bn->requires_grad) {
              bn->ensure_grad();
              Real db = av / denom;
              if (!clamped) db -= c * bv / (nb * nb);
              bn->grad[i * d + j] += g * db;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Value-only helpers (no gradients)
// ---------------------------------------------------------------------------

template <typename Real>
std::vector<std::size_t> argmax_last(const Tensor<Real>& x) {
  const std::size_t d = detail::last_dim("argmax", x);
  const std::size_t rows = x.size() / d;
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (x.at(r * d + j) > x.at(r * d + best)) best = j;
    out[r] = best;
  }
  return out;
}

}  // namespace wavssl
