#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msan/param_store.hpp"
#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace msan {

// Token embedding. Row 0 is the padding id and stays a zero vector: it is
// skipped by the forward copy and receives no gradient.
inline Tensor embed(const std::vector<std::size_t>& tokens, const Tensor& table) {
  if (tokens.empty()) fail("empty-sequence", "embed on empty token list");
  const std::size_t rows = table.rows(), d = table.cols();
  std::vector<double> out(tokens.size() * d, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t id = tokens[i];
    if (id >= rows)
      fail("vocab", "token id " + std::to_string(id) + " outside table of " +
                        std::to_string(rows));
    if (id == 0) continue;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table.at(id, j);
  }
  auto node = detail::make_result(Shape{tokens.size(), d}, std::move(out),
                                  {table.node()});
  if (node->requires_grad) {
    node->backward = [tokens, d](TensorNode& self) {
      auto& p = self.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == 0) continue;
        for (std::size_t j = 0; j < d; ++j)
          p->grad[tokens[i] * d + j] += self.grad[i * d + j];
      }
    };
  }
  return Tensor(node);
}

// One-layer bidirectional LSTM; each direction has hidden size d/2 so the
// per-timestep output width is d. Gate order in the stacked matrices is
// [input, forget, cell, output].
struct BiRnnParams {
  Tensor w_fwd, u_fwd, b_fwd;
  Tensor w_bwd, u_bwd, b_bwd;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;  // per direction
};

inline BiRnnParams init_birnn(ParamStore& store, const std::string& prefix,
                              std::size_t input_dim, std::size_t output_dim,
                              Rng& rng) {
  if (output_dim % 2 != 0) fail("config", "encoder output width must be even");
  const std::size_t h = output_dim / 2;
  BiRnnParams p;
  p.input_dim = input_dim;
  p.hidden = h;
  p.w_fwd = store.create_uniform(prefix + ".fwd.w", {input_dim, 4 * h}, input_dim, rng);
  p.u_fwd = store.create_uniform(prefix + ".fwd.u", {h, 4 * h}, h, rng);
  p.b_fwd = store.create_uniform(prefix + ".fwd.b", {4 * h}, h, rng);
  p.w_bwd = store.create_uniform(prefix + ".bwd.w", {input_dim, 4 * h}, input_dim, rng);
  p.u_bwd = store.create_uniform(prefix + ".bwd.u", {h, 4 * h}, h, rng);
  p.b_bwd = store.create_uniform(prefix + ".bwd.b", {4 * h}, h, rng);
  return p;
}

inline BiRnnParams load_birnn(const ParamStore& store, const std::string& prefix) {
  BiRnnParams p;
  p.w_fwd = store.get(prefix + ".fwd.w");
  p.u_fwd = store.get(prefix + ".fwd.u");
  p.b_fwd = store.get(prefix + ".fwd.b");
  p.w_bwd = store.get(prefix + ".bwd.w");
  p.u_bwd = store.get(prefix + ".bwd.u");
  p.b_bwd = store.get(prefix + ".bwd.b");
  p.input_dim = p.w_fwd.rows();
  p.hidden = p.u_fwd.rows();
  return p;
}

namespace detail {

struct LstmTrace {
  // post-activation gates and cell states per timestep, each n*h
  std::vector<double> gi, gf, gg, go, c, tc, hs;
};

// One direction over rows t = 0..n-1 of x, visiting row order[t]. The
// input projection x*W is hoisted out of the recurrence as one big GEMM.
inline void lstm_forward(const double* x, std::size_t n, std::size_t in,
                         std::size_t h, const double* w, const double* u,
                         const double* b, bool reversed, LstmTrace& tr) {
  tr.gi.assign(n * h, 0.0);
  tr.gf.assign(n * h, 0.0);
  tr.gg.assign(n * h, 0.0);
  tr.go.assign(n * h, 0.0);
  tr.c.assign(n * h, 0.0);
  tr.tc.assign(n * h, 0.0);
  tr.hs.assign(n * h, 0.0);
  std::vector<double> xw(n * 4 * h, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double* xt = x + t * in;
    double* row = xw.data() + t * 4 * h;
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xt[i];
      const double* wrow = w + i * 4 * h;
      for (std::size_t j = 0; j < 4 * h; ++j) row[j] += xv * wrow[j];
    }
  }
  std::vector<double> pre(4 * h);
  std::vector<double> h_prev(h, 0.0), c_prev(h, 0.0);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reversed ? n - 1 - step : step;
    const double* xwt = xw.data() + t * 4 * h;
    for (std::size_t j = 0; j < 4 * h; ++j) pre[j] = b[j] + xwt[j];
    for (std::size_t k = 0; k < h; ++k) {
      const double hv = h_prev[k];
      const double* urow = u + k * 4 * h;
      for (std::size_t j = 0; j < 4 * h; ++j) pre[j] += hv * urow[j];
    }
    double* gi = tr.gi.data() + step * h;
    double* gf = tr.gf.data() + step * h;
    double* gg = tr.gg.data() + step * h;
    double* go = tr.go.data() + step * h;
    double* c = tr.c.data() + step * h;
    double* tc = tr.tc.data() + step * h;
    double* hs = tr.hs.data() + step * h;
    for (std::size_t k = 0; k < h; ++k) {
      gi[k] = 1.0 / (1.0 + std::exp(-pre[k]));
      gf[k] = 1.0 / (1.0 + std::exp(-pre[h + k]));
      gg[k] = std::tanh(pre[2 * h + k]);
      go[k] = 1.0 / (1.0 + std::exp(-pre[3 * h + k]));
      c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
      tc[k] = std::tanh(c[k]);
      hs[k] = go[k] * tc[k];
    }
    std::copy(hs, hs + h, h_prev.begin());
    std::copy(c, c + h, c_prev.begin());
  }
}

// BPTT for one direction. dh comes per step (already in step order);
// accumulates into dw/du/db/dx. Pre-activation grads are buffered per
// step so the input-side products become two GEMMs after the recurrence.
inline void lstm_backward(const double* x, std::size_t n, std::size_t in,
                          std::size_t h, const double* w, const double* u,
                          bool reversed, const LstmTrace& tr, const double* dh_in,
                          double* dw, double* du, double* db, double* dx) {
  std::vector<double> dh(h, 0.0), dc(h, 0.0);
  std::vector<double> dpre_all(n * 4 * h);
  for (std::size_t step = n; step-- > 0;) {
    double* dpre = dpre_all.data() + step * 4 * h;
    const double* gi = tr.gi.data() + step * h;
    const double* gf = tr.gf.data() + step * h;
    const double* gg = tr.gg.data() + step * h;
    const double* go = tr.go.data() + step * h;
    const double* tc = tr.tc.data() + step * h;
    const double* c_prev =
        step == 0 ? nullptr : tr.c.data() + (step - 1) * h;
    const double* h_prev =
        step == 0 ? nullptr : tr.hs.data() + (step - 1) * h;
    for (std::size_t k = 0; k < h; ++k) {
      const double dh_total = dh[k] + dh_in[step * h + k];
      const double do_ = dh_total * tc[k];
      const double dtc = dh_total * go[k];
      const double dck = dc[k] + dtc * (1.0 - tc[k] * tc[k]);
      const double di = dck * gg[k];
      const double dg = dck * gi[k];
      const double df = dck * (step == 0 ? 0.0 : c_prev[k]);
      dc[k] = dck * gf[k];  // becomes dc_prev
      dpre[k] = di * gi[k] * (1.0 - gi[k]);
      dpre[h + k] = df * gf[k] * (1.0 - gf[k]);
      dpre[2 * h + k] = dg * (1.0 - gg[k] * gg[k]);
      dpre[3 * h + k] = do_ * go[k] * (1.0 - go[k]);
    }
    if (db) {
      for (std::size_t j = 0; j < 4 * h; ++j) db[j] += dpre[j];
    }
    if (du && step > 0) {
      for (std::size_t k = 0; k < h; ++k) {
        const double hv = h_prev[k];
        double* urow = du + k * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) urow[j] += hv * dpre[j];
      }
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double* urow = u + k * 4 * h;
      double acc = 0.0;
      for (std::size_t j = 0; j < 4 * h; ++j) acc += urow[j] * dpre[j];
      dh[k] = acc;
    }
  }
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reversed ? n - 1 - step : step;
    const double* dpre = dpre_all.data() + step * 4 * h;
    const double* xt = x + t * in;
    if (dw) {
      for (std::size_t i = 0; i < in; ++i) {
        const double xv = xt[i];
        double* wrow = dw + i * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) wrow[j] += xv * dpre[j];
      }
    }
    if (dx) {
      double* dxt = dx + t * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double* wrow = w + i * 4 * h;
        double acc = 0.0;
        for (std::size_t j = 0; j < 4 * h; ++j) acc += wrow[j] * dpre[j];
        dxt[i] += acc;
      }
    }
  }
}

}  // namespace detail

// x: n×input_dim -> n×(2*hidden). Row t is [forward state at t ; backward
// state at t], so the first half depends only on x[0..t] and the second
// half only on x[t..n-1]. Fused into one tape node with a BPTT backward.
inline Tensor birnn_encode(const Tensor& x, const BiRnnParams& p) {
  if (x.ndim() != 2) fail("dimension", "birnn_encode expects a matrix");
  const std::size_t n = x.rows();
  if (n == 0) fail("empty-sequence", "birnn_encode on empty sequence");
  if (x.cols() != p.input_dim)
    fail("dimension", "birnn_encode input width " + std::to_string(x.cols()) +
                          " != " + std::to_string(p.input_dim));
  const std::size_t in = p.input_dim, h = p.hidden;

  auto fwd = std::make_shared<detail::LstmTrace>();
  auto bwd = std::make_shared<detail::LstmTrace>();
  detail::lstm_forward(x.values().data(), n, in, h, p.w_fwd.values().data(),
                       p.u_fwd.values().data(), p.b_fwd.values().data(),
                       /*reversed=*/false, *fwd);
  detail::lstm_forward(x.values().data(), n, in, h, p.w_bwd.values().data(),
                       p.u_bwd.values().data(), p.b_bwd.values().data(),
                       /*reversed=*/true, *bwd);

  std::vector<double> out(n * 2 * h);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < h; ++k) {
      out[t * 2 * h + k] = fwd->hs[t * h + k];
      // backward direction step s visited row n-1-s, so row t is step n-1-t
      out[t * 2 * h + h + k] = bwd->hs[(n - 1 - t) * h + k];
    }
  }
  auto node = detail::make_result(
      Shape{n, 2 * h}, std::move(out),
      {x.node(), p.w_fwd.node(), p.u_fwd.node(), p.b_fwd.node(),
       p.w_bwd.node(), p.u_bwd.node(), p.b_bwd.node()});
  if (node->requires_grad) {
    node->backward = [n, in, h, fwd, bwd](TensorNode& self) {
      auto& px = self.parents[0];
      auto& pwf = self.parents[1];
      auto& puf = self.parents[2];
      auto& pbf = self.parents[3];
      auto& pwb = self.parents[4];
      auto& pub = self.parents[5];
      auto& pbb = self.parents[6];
      std::vector<double> dh_f(n * h), dh_b(n * h);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < h; ++k) {
          dh_f[t * h + k] = self.grad[t * 2 * h + k];
          dh_b[(n - 1 - t) * h + k] = self.grad[t * 2 * h + h + k];
        }
      const bool need_x = px->requires_grad;
      if (need_x) px->ensure_grad();
      auto grad_ptr = [](NodePtr& p) -> double* {
        if (!p->requires_grad) return nullptr;
        p->ensure_grad();
        return p->grad.data();
      };
      detail::lstm_backward(px->values.data(), n, in, h, pwf->values.data(),
                            puf->values.data(), false, *fwd, dh_f.data(),
                            grad_ptr(pwf), grad_ptr(puf), grad_ptr(pbf),
                            need_x ? px->grad.data() : nullptr);
      detail::lstm_backward(px->values.data(), n, in, h, pwb->values.data(),
                            pub->values.data(), true, *bwd, dh_b.data(),
                            grad_ptr(pwb), grad_ptr(pub), grad_ptr(pbb),
                            need_x ? px->grad.data() : nullptr);
    };
  }
  return Tensor(node);
}

}  // namespace msan
