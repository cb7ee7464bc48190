#pragma once

#include <string>

#include "msan/param_store.hpp"
#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace msan {

// FC(hidden)-ReLU-FC(out); the score regressor, the MIM gates and the
// answer heads are all this shape with different widths.
struct TwoLayerMlp {
  Tensor w1, b1, w2, b2;

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w2.cols(); }

  // x: 1×in -> 1×out
  Tensor apply(const Tensor& x) const {
    Tensor h = relu(add(matmul(x, w1), as_row(b1)));
    return add(matmul(h, w2), as_row(b2));
  }

  Tensor apply_vec(const Tensor& v) const { return apply(as_row(v)); }
};

inline TwoLayerMlp init_mlp(ParamStore& store, const std::string& prefix,
                            std::size_t in, std::size_t hidden, std::size_t out,
                            Rng& rng) {
  TwoLayerMlp m;
  m.w1 = store.create_uniform(prefix + ".w1", {in, hidden}, in, rng);
  m.b1 = store.create_uniform(prefix + ".b1", {hidden}, in, rng);
  m.w2 = store.create_uniform(prefix + ".w2", {hidden, out}, hidden, rng);
  m.b2 = store.create_uniform(prefix + ".b2", {out}, hidden, rng);
  return m;
}

inline TwoLayerMlp load_mlp(const ParamStore& store, const std::string& prefix) {
  TwoLayerMlp m;
  m.w1 = store.get(prefix + ".w1");
  m.b1 = store.get(prefix + ".b1");
  m.w2 = store.get(prefix + ".w2");
  m.b2 = store.get(prefix + ".b2");
  return m;
}

}  // namespace msan
