#pragma once

#include "msan/tensor.hpp"

namespace msan {

// Dot-product attention: rows of X attend over rows of Y via unscaled
// dot-product similarity; each output row is a convex combination of Y's
// rows. The unit has no parameters of its own.
inline Tensor dot_attention(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols()) {
    fail("dimension", "dot_attention feature widths " + shape_str(x.shape()) +
                          " and " + shape_str(y.shape()));
  }
  Tensor attn = softmax_rows(matmul(x, transpose(y)));
  return matmul(attn, y);
}

inline Tensor self_attend(const Tensor& x) { return dot_attention(x, x); }

}  // namespace msan
