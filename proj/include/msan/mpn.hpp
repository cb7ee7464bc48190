#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/data.hpp"
#include "msan/encoder.hpp"
#include "msan/mlp.hpp"
#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace msan {

enum class Modulation { additive, multiplicative, residual };

inline Modulation modulation_from_string(const std::string& s) {
  if (s == "additive") return Modulation::additive;
  if (s == "multiplicative") return Modulation::multiplicative;
  if (s == "residual") return Modulation::residual;
  fail("config", "unknown modulation mode '" + s +
                     "' (expected additive|multiplicative|residual)");
}

inline const char* modulation_to_string(Modulation m) {
  switch (m) {
    case Modulation::additive: return "additive";
    case Modulation::multiplicative: return "multiplicative";
    case Modulation::residual: return "residual";
  }
  return "?";
}

enum class CandidateLabel { unset, positive, negative };

struct MoICandidate {
  Span span;
  std::vector<std::size_t> member_shots;
  std::vector<std::size_t> member_sentences;
  double m_v = 0.0;  // moment scores, modulated once MIM has run
  double m_s = 0.0;
  CandidateLabel label = CandidateLabel::unset;
};

struct CandidateSet {
  std::vector<MoICandidate> candidates;
  std::vector<std::string> warnings;
};

// Sliding-window MoI candidates. For each window length, starts advance by
// stride_fraction * length, plus a right-aligned span so the union always
// reaches the end of the timeline. Duplicates are dropped.
inline CandidateSet generate_candidates(const ClipRecord& clip,
                                        const std::vector<double>& window_lengths,
                                        double stride_fraction) {
  if (window_lengths.empty())
    fail("contract", "generate_candidates needs at least one window length");
  if (stride_fraction <= 0.0 || stride_fraction > 1.0)
    fail("config", "stride_fraction must be in (0, 1]");
  const double timeline = clip.timeline_length;
  CandidateSet out;
  for (double w : window_lengths) {
    if (w <= 0.0) fail("config", "window length must be positive");
    if (w > timeline + kSpanEps) {
      out.warnings.push_back("window length " + std::to_string(w) +
                             " exceeds timeline " + std::to_string(timeline) +
                             "; skipped");
      continue;
    }
    std::vector<double> starts;
    const double step = std::max(kSpanEps, w * stride_fraction);
    for (double s = 0.0; s + w <= timeline + kSpanEps; s += step)
      starts.push_back(s);
    starts.push_back(timeline - w);  // right-aligned final span
    for (double s : starts) {
      Span span{std::max(0.0, s), std::min(timeline, s + w)};
      bool dup = false;
      for (const auto& c : out.candidates)
        dup |= std::abs(c.span.begin - span.begin) < kSpanEps &&
               std::abs(c.span.end - span.end) < kSpanEps;
      if (dup) continue;
      MoICandidate cand;
      cand.span = span;
      for (std::size_t i = 0; i < clip.shots.size(); ++i)
        if (spans_overlap(clip.shots[i].span, span)) cand.member_shots.push_back(i);
      for (std::size_t i = 0; i < clip.sentences.size(); ++i)
        if (spans_overlap(clip.sentences[i].span, span))
          cand.member_sentences.push_back(i);
      out.candidates.push_back(std::move(cand));
    }
  }
  return out;
}

inline double temporal_iou(const Span& a, const Span& b) {
  if (!a.valid() || !b.valid())
    fail("contract", "temporal_iou on degenerate span");
  const double inter = std::min(a.end, b.end) - std::max(a.begin, b.begin);
  const double uni = std::max(a.end, b.end) - std::min(a.begin, b.begin);
  return std::max(0.0, inter / uni);
}

// fraction of the ground-truth moment covered by the prediction
inline double coverage(const Span& pred, const Span& gt) {
  if (!pred.valid()) fail("contract", "coverage on degenerate prediction");
  if (!gt.valid()) fail("contract", "coverage on degenerate ground truth");
  const double inter = std::min(pred.end, gt.end) - std::max(pred.begin, gt.begin);
  return std::min(1.0, std::max(0.0, inter / gt.length()));
}

// positive iff IoU >= 0.5; when nothing clears the bar the best-IoU
// candidate is promoted so every record can contribute to the loss
inline void label_candidates(std::vector<MoICandidate>& cands, const Span& gt) {
  if (cands.empty()) return;
  std::size_t best = 0;
  double best_iou = -1.0;
  bool any_positive = false;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double iou = temporal_iou(cands[i].span, gt);
    cands[i].label =
        iou >= 0.5 ? CandidateLabel::positive : CandidateLabel::negative;
    any_positive |= cands[i].label == CandidateLabel::positive;
    if (iou > best_iou) {
      best_iou = iou;
      best = i;
    }
  }
  if (!any_positive) cands[best].label = CandidateLabel::positive;
}

// alpha = sigmoid(MLP(q)) over the average-pooled question feature
inline Tensor mim_alpha(const Tensor& question_feature, const TwoLayerMlp& gate) {
  return sigmoid(pick(gate.apply_vec(question_feature), 0));
}

// m_v' = F(m_v, alpha), m_s' = F(m_s, 1 - alpha)
inline std::pair<Tensor, Tensor> modulate_moment_scores(const Tensor& m_v,
                                                        const Tensor& m_s,
                                                        const Tensor& alpha,
                                                        Modulation mode) {
  Tensor one_minus = sub(Tensor::scalar(1.0), alpha);
  auto apply = [mode](const Tensor& m, const Tensor& a) {
    switch (mode) {
      case Modulation::additive: return add(m, a);
      case Modulation::multiplicative: return mul(m, a);
      case Modulation::residual: return add(m, mul(m, a));
    }
    fail("config", "unknown modulation mode");
  };
  return {apply(m_v, alpha), apply(m_s, one_minus)};
}

// C2Q against the hypothesis stream, concat, bi-LSTM, temporal max-pool,
// then the shared FC(d)-ReLU-FC(1)-sigmoid regressor.
inline Tensor score_moment_features(const Tensor& context_rows,
                                    const Tensor& hypothesis,
                                    const BiRnnParams& lstm,
                                    const TwoLayerMlp& regressor) {
  Tensor attended = dot_attention(context_rows, hypothesis);
  Tensor merged = concat_feature({context_rows, attended});
  Tensor encoded = birnn_encode(merged, lstm);
  Tensor pooled = maxpool_time(encoded);
  return sigmoid(pick(regressor.apply_vec(pooled), 0));
}

struct ScoredCandidate {
  Tensor m_v;  // modulated, graph-connected
  Tensor m_s;
  bool positive = false;
};

// Cross-modal ranking loss: pool the modulated video and subtitle scores
// of equally many sampled positives and negatives, then take the mean
// hinge b + p- - p+ over all pairs.
inline std::optional<Tensor> cmr_loss(const std::vector<ScoredCandidate>& cands,
                                      double margin, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < cands.size(); ++i)
    (cands[i].positive ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) return std::nullopt;
  const std::size_t k = std::min(pos.size(), neg.size());
  rng.shuffle(pos);
  rng.shuffle(neg);
  pos.resize(k);
  neg.resize(k);
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<Tensor> pos_scores, neg_scores;
  for (std::size_t i : pos) {
    pos_scores.push_back(cands[i].m_v);
    pos_scores.push_back(cands[i].m_s);
  }
  for (std::size_t i : neg) {
    neg_scores.push_back(cands[i].m_v);
    neg_scores.push_back(cands[i].m_s);
  }
  const Tensor b = Tensor::scalar(margin);
  Tensor total;
  for (const auto& p : pos_scores)
    for (const auto& n : neg_scores) {
      Tensor pair = relu(add(b, sub(n, p)));
      total = total.defined() ? add(total, pair) : pair;
    }
  const double pairs =
      static_cast<double>(pos_scores.size() * neg_scores.size());
  return scale(total, 1.0 / pairs);
}

// winner = argmax of max(m_v, m_s), ties to the earliest start; the span
// is then grown by expand_fraction of its length on each side
inline Span select_moment(const std::vector<MoICandidate>& cands,
                          double expand_fraction, double timeline_length) {
  if (cands.empty()) fail("contract", "select_moment on empty candidate list");
  std::size_t best = 0;
  double best_score = std::max(cands[0].m_v, cands[0].m_s);
  for (std::size_t i = 1; i < cands.size(); ++i) {
    const double score = std::max(cands[i].m_v, cands[i].m_s);
    if (score > best_score ||
        (score == best_score && cands[i].span.begin < cands[best].span.begin)) {
      best = i;
      best_score = score;
    }
  }
  const Span& s = cands[best].span;
  const double grow = expand_fraction * s.length();
  return {std::max(0.0, s.begin - grow),
          std::min(timeline_length, s.end + grow)};
}

}  // namespace msan
