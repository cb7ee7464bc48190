#pragma once

#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/encoder.hpp"
#include "msan/mlp.hpp"
#include "msan/tensor.hpp"

namespace msan {

// Transformed context pair for one hypothesis: each context row expressed
// in its own space, the hypothesis space and the other context's space.
struct HeterogeneousContext {
  Tensor v_tilde;  // n_v × 3d (2d without the C2C block)
  Tensor s_tilde;  // n_s × 3d
};

struct HamOptions {
  bool use_sa = true;
  bool use_c2c = true;
};

inline HeterogeneousContext build_ham(const Tensor& video, const Tensor& subtitle,
                                      const Tensor& hypothesis,
                                      const HamOptions& opt = {}) {
  auto check = [](const Tensor& t, const char* name) {
    if (t.ndim() != 2 || t.rows() == 0)
      fail("empty-sequence", std::string("build_ham: empty ") + name + " stream");
  };
  check(video, "video");
  check(subtitle, "subtitle");
  check(hypothesis, "hypothesis");
  Tensor v = opt.use_sa ? self_attend(video) : video;
  Tensor s = opt.use_sa ? self_attend(subtitle) : subtitle;
  Tensor h = opt.use_sa ? self_attend(hypothesis) : hypothesis;

  Tensor v_h = dot_attention(v, h);
  Tensor s_h = dot_attention(s, h);

  HeterogeneousContext ctx;
  if (opt.use_c2c) {
    Tensor v_s = dot_attention(v, s);
    Tensor s_v = dot_attention(s, v);
    ctx.v_tilde = concat_feature({v, v_h, v_s});
    ctx.s_tilde = concat_feature({s, s_h, s_v});
  } else {
    ctx.v_tilde = concat_feature({v, v_h});
    ctx.s_tilde = concat_feature({s, s_h});
  }
  return ctx;
}

// How the final FC layer of the answer head turns the pooled feature into
// the per-hypothesis score: a scalar output per hypothesis, or an FC(5)
// layer from which the k-th unit is read for hypothesis k.
enum class HeadMode { scalar_per_hypothesis, fc5 };

inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "scalar") return HeadMode::scalar_per_hypothesis;
  if (s == "fc5") return HeadMode::fc5;
  fail("config", "unknown head mode '" + s + "' (expected scalar|fc5)");
}

struct AnswerHead {
  BiRnnParams lstm;  // over 3d-wide context rows
  TwoLayerMlp mlp;   // d -> d -> 1 or d -> d -> 5
  HeadMode mode = HeadMode::scalar_per_hypothesis;
};

inline Tensor head_score(const Tensor& context, const AnswerHead& head,
                         std::size_t hypothesis_index) {
  Tensor pooled = maxpool_time(birnn_encode(context, head.lstm));
  Tensor out = head.mlp.apply_vec(pooled);
  const std::size_t unit =
      head.mode == HeadMode::scalar_per_hypothesis ? 0 : hypothesis_index;
  return pick(out, unit);
}

// one context pair per hypothesis -> (l_v, l_s), each a 5-vector
inline std::pair<Tensor, Tensor> predict_logits(
    const std::vector<HeterogeneousContext>& contexts,
    const AnswerHead& video_head, const AnswerHead& subtitle_head) {
  if (contexts.empty()) fail("contract", "predict_logits needs hypotheses");
  std::vector<Tensor> lv, ls;
  for (std::size_t k = 0; k < contexts.size(); ++k) {
    lv.push_back(head_score(contexts[k].v_tilde, video_head, k));
    ls.push_back(head_score(contexts[k].s_tilde, subtitle_head, k));
  }
  return {stack_scalars(lv), stack_scalars(ls)};
}

// l = beta * l_v + (1 - beta) * l_s
inline Tensor blend_logits(const Tensor& logits_v, const Tensor& logits_s,
                           const Tensor& beta) {
  Tensor one_minus = sub(Tensor::scalar(1.0), beta);
  return add(mul(logits_v, beta), mul(logits_s, one_minus));
}

inline Tensor ce_loss(const Tensor& logits, std::size_t gt_answer) {
  if (logits.ndim() != 1 || logits.size() != 5)
    fail("dimension", "ce_loss expects a 5-vector, got " + shape_str(logits.shape()));
  if (gt_answer >= 5)
    fail("contract", "gt_answer " + std::to_string(gt_answer) + " out of 0..4");
  return cross_entropy(logits, gt_answer);
}

}  // namespace msan
