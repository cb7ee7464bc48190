#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/data.hpp"
#include "msan/encoder.hpp"
#include "msan/hrn.hpp"
#include "msan/mlp.hpp"
#include "msan/mpn.hpp"
#include "msan/param_store.hpp"

namespace msan {

struct MsanConfig {
  std::size_t d = 64;      // encoder output width
  std::size_t d_emb = 64;  // embedding width
  Modulation modulation = Modulation::multiplicative;
  double margin = 0.2;
  double stride_fraction = 0.5;
  double expand_fraction = 0.25;
  bool expand_at_train = true;  // apply the safety margin during training too
  double cmr_weight = 1.0;
  std::vector<double> window_fracs = {0.25, 0.5, 1.0};
  HeadMode head_mode = HeadMode::scalar_per_hypothesis;
  bool use_mpn = true;
  bool use_gt_moment = false;
  bool use_sa = true;
  bool use_c2c = true;
  bool mim_on_mpn = true;
  bool mim_on_hrn = true;
  bool use_action_concepts = true;

  bool needs_candidate_scoring() const { return use_mpn && !use_gt_moment; }
  std::size_t context_width() const { return (use_c2c ? 3 : 2) * d; }

  void validate() const {
    if (d == 0 || d % 2 != 0) fail("config", "d must be positive and even");
    if (d_emb == 0) fail("config", "d_emb must be positive");
    if (margin < 0.0) fail("config", "margin must be non-negative");
    if (stride_fraction <= 0.0 || stride_fraction > 1.0)
      fail("config", "stride_fraction must be in (0, 1]");
    if (expand_fraction < 0.0) fail("config", "expand_fraction must be non-negative");
    if (cmr_weight < 0.0) fail("config", "cmr_weight must be non-negative");
    if (window_fracs.empty()) fail("config", "window_fracs must be nonempty");
    for (double w : window_fracs)
      if (w <= 0.0 || w > 1.0)
        fail("config", "window fractions must be in (0, 1]");
  }
};

struct MsanModel {
  MsanConfig cfg;
  Vocab vocab;
  ParamStore params;

  Tensor embedding;
  BiRnnParams enc_video, enc_subtitle, enc_hyp;
  BiRnnParams mpn_video_lstm, mpn_subtitle_lstm;
  TwoLayerMlp mpn_regressor, alpha_gate;
  BiRnnParams hrn_video_lstm, hrn_subtitle_lstm;
  TwoLayerMlp head_video_mlp, head_subtitle_mlp, beta_gate;
};

inline MsanModel init_model(const MsanConfig& cfg, const Vocab& vocab,
                            std::uint64_t seed) {
  cfg.validate();
  MsanModel m;
  m.cfg = cfg;
  m.vocab = vocab;
  m.params = ParamStore(seed);
  Rng rng(named_seed(seed, "init"));

  {
    // a lookup row is a linear map of a one-hot input: fan_in = 1
    std::vector<double> table(vocab.total() * cfg.d_emb, 0.0);
    for (std::size_t i = cfg.d_emb; i < table.size(); ++i)  // row 0 stays zero
      table[i] = rng.uniform(-1.0, 1.0);
    m.embedding = m.params.create("embed.table", {vocab.total(), cfg.d_emb},
                                  std::move(table));
  }
  // The three stream encoders are separate parameter sets but start from
  // identical values, so a token keeps a similar encoded signature across
  // streams and the parameter-free dot-product attention can match
  // context tokens against hypothesis tokens from the first step.
  {
    Rng enc_seed(named_seed(seed, "init-encoders"));
    Rng rv = enc_seed, rs = enc_seed, rh = enc_seed;
    m.enc_video = init_birnn(m.params, "enc.video", cfg.d_emb, cfg.d, rv);
    m.enc_subtitle = init_birnn(m.params, "enc.subtitle", cfg.d_emb, cfg.d, rs);
    m.enc_hyp = init_birnn(m.params, "enc.hypothesis", cfg.d_emb, cfg.d, rh);
  }

  if (cfg.needs_candidate_scoring()) {
    m.mpn_video_lstm = init_birnn(m.params, "mpn.video.lstm", 2 * cfg.d, cfg.d, rng);
    m.mpn_subtitle_lstm =
        init_birnn(m.params, "mpn.subtitle.lstm", 2 * cfg.d, cfg.d, rng);
    m.mpn_regressor = init_mlp(m.params, "mpn.regressor", cfg.d, cfg.d, 1, rng);
    if (cfg.mim_on_mpn)
      m.alpha_gate = init_mlp(m.params, "mpn.alpha_gate", cfg.d, cfg.d, 1, rng);
  }

  const std::size_t ctx_w = cfg.context_width();
  const std::size_t head_out = cfg.head_mode == HeadMode::fc5 ? 5 : 1;
  m.hrn_video_lstm = init_birnn(m.params, "hrn.video.lstm", ctx_w, cfg.d, rng);
  m.hrn_subtitle_lstm = init_birnn(m.params, "hrn.subtitle.lstm", ctx_w, cfg.d, rng);
  m.head_video_mlp = init_mlp(m.params, "hrn.video.head", cfg.d, cfg.d, head_out, rng);
  m.head_subtitle_mlp =
      init_mlp(m.params, "hrn.subtitle.head", cfg.d, cfg.d, head_out, rng);
  if (cfg.mim_on_hrn)
    m.beta_gate = init_mlp(m.params, "hrn.beta_gate", cfg.d, cfg.d, 1, rng);
  return m;
}

// rebind tensor handles onto an existing (e.g. deserialized) store
inline MsanModel bind_model(const MsanConfig& cfg, const Vocab& vocab,
                            ParamStore store) {
  cfg.validate();
  MsanModel m;
  m.cfg = cfg;
  m.vocab = vocab;
  m.params = std::move(store);
  m.embedding = m.params.get("embed.table");
  m.enc_video = load_birnn(m.params, "enc.video");
  m.enc_subtitle = load_birnn(m.params, "enc.subtitle");
  m.enc_hyp = load_birnn(m.params, "enc.hypothesis");
  if (cfg.needs_candidate_scoring()) {
    m.mpn_video_lstm = load_birnn(m.params, "mpn.video.lstm");
    m.mpn_subtitle_lstm = load_birnn(m.params, "mpn.subtitle.lstm");
    m.mpn_regressor = load_mlp(m.params, "mpn.regressor");
    if (cfg.mim_on_mpn) m.alpha_gate = load_mlp(m.params, "mpn.alpha_gate");
  }
  m.hrn_video_lstm = load_birnn(m.params, "hrn.video.lstm");
  m.hrn_subtitle_lstm = load_birnn(m.params, "hrn.subtitle.lstm");
  m.head_video_mlp = load_mlp(m.params, "hrn.video.head");
  m.head_subtitle_mlp = load_mlp(m.params, "hrn.subtitle.head");
  if (cfg.mim_on_hrn) m.beta_gate = load_mlp(m.params, "hrn.beta_gate");
  return m;
}

// flattened token stream of one modality; element[i] maps token i back to
// its shot or sentence index
struct TokenStream {
  std::vector<std::size_t> tokens;
  std::vector<Span> spans;
  std::vector<std::size_t> element;
};

inline TokenStream video_stream(const ClipRecord& rec, bool with_actions) {
  TokenStream out;
  for (std::size_t s = 0; s < rec.shots.size(); ++s) {
    const Shot& shot = rec.shots[s];
    auto push = [&](std::size_t id) {
      out.tokens.push_back(id);
      out.spans.push_back(shot.span);
      out.element.push_back(s);
    };
    for (std::size_t id : shot.concepts) push(id);
    if (with_actions)
      for (std::size_t id : shot.action_concepts) push(id);
  }
  return out;
}

inline TokenStream subtitle_stream(const ClipRecord& rec) {
  TokenStream out;
  for (std::size_t s = 0; s < rec.sentences.size(); ++s) {
    for (std::size_t id : rec.sentences[s].tokens) {
      out.tokens.push_back(id);
      out.spans.push_back(rec.sentences[s].span);
      out.element.push_back(s);
    }
  }
  return out;
}

struct EncodedClip {
  TokenStream vstream, sstream;
  Tensor video;     // n_v × d
  Tensor subtitle;  // n_s × d
  std::vector<Tensor> hypotheses;
  Tensor hyp_all;           // row-stack of the five hypothesis encodings
  Tensor question_feature;  // {d}, average-pooled encoded question
};

inline EncodedClip encode_clip(const MsanModel& m, const ClipRecord& rec) {
  EncodedClip out;
  out.vstream = video_stream(rec, m.cfg.use_action_concepts);
  out.sstream = subtitle_stream(rec);
  out.video = birnn_encode(embed(out.vstream.tokens, m.embedding), m.enc_video);
  out.subtitle =
      birnn_encode(embed(out.sstream.tokens, m.embedding), m.enc_subtitle);
  for (const auto& answer : rec.answers) {
    std::vector<std::size_t> tokens = rec.question_tokens;
    tokens.insert(tokens.end(), answer.begin(), answer.end());
    out.hypotheses.push_back(
        birnn_encode(embed(tokens, m.embedding), m.enc_hyp));
  }
  out.hyp_all = concat_rows(out.hypotheses);
  out.question_feature = meanpool_time(
      birnn_encode(embed(rec.question_tokens, m.embedding), m.enc_hyp));
  return out;
}

// token rows of a stream whose spans overlap the given span; a single
// zero row stands in when nothing overlaps
inline Tensor rows_in_span(const Tensor& encoded, const TokenStream& stream,
                           const Span& span, std::size_t d) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < stream.spans.size(); ++i)
    if (spans_overlap(stream.spans[i], span)) idx.push_back(i);
  if (idx.empty()) return Tensor::zeros({1, d});
  return gather_rows(encoded, idx);
}

inline Tensor rows_of_elements(const Tensor& encoded, const TokenStream& stream,
                               const std::vector<std::size_t>& elements,
                               std::size_t d) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < stream.element.size(); ++i)
    for (std::size_t e : elements)
      if (stream.element[i] == e) {
        idx.push_back(i);
        break;
      }
  if (idx.empty()) return Tensor::zeros({1, d});
  return gather_rows(encoded, idx);
}

enum class ForwardMode { train, eval };

struct ForwardOptions {
  ForwardMode mode = ForwardMode::eval;
  std::uint64_t sample_seed = 0;     // pos/neg sampling stream for the CMR loss
  std::optional<Span> forced_span;   // overrides moment selection (grad checks)
};

struct RecordTrace {
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  Span predicted_span;
  double iou = 0.0;
  double cov = 0.0;
  std::array<double, kNumAnswers> logits_v{}, logits_s{}, logits{};
  std::size_t predicted = 0;
  bool correct = false;
  ModalityLabel label = ModalityLabel::SS;
  std::size_t question_type = kNumQuestionTypes;
};

struct ForwardResult {
  Tensor loss;
  Tensor ce;
  std::optional<Tensor> cmr;
  RecordTrace trace;
};

inline ForwardResult forward_record(const MsanModel& m, const ClipRecord& rec,
                                    const ForwardOptions& opts) {
  const MsanConfig& cfg = m.cfg;
  ForwardResult out;
  out.trace.label = rec.modality_label;
  out.trace.question_type = m.vocab.question_type(rec);

  EncodedClip enc = encode_clip(m, rec);

  // ----- stage 1: moment localization -----
  Span span{0.0, rec.timeline_length};
  std::optional<Tensor> cmr;
  if (cfg.use_gt_moment) {
    span = rec.gt_moment;
  } else if (cfg.use_mpn) {
    std::vector<double> window_lengths;
    for (double f : cfg.window_fracs)
      window_lengths.push_back(f * rec.timeline_length);
    CandidateSet set =
        generate_candidates(rec, window_lengths, cfg.stride_fraction);
    if (set.candidates.empty())
      fail("contract", "no MoI candidates for record");
    label_candidates(set.candidates, rec.gt_moment);

    Tensor alpha;
    if (cfg.mim_on_mpn) {
      alpha = mim_alpha(enc.question_feature, m.alpha_gate);
      out.trace.alpha = alpha.item();
    }
    std::vector<ScoredCandidate> scored;
    for (auto& cand : set.candidates) {
      Tensor vc = rows_of_elements(enc.video, enc.vstream, cand.member_shots, cfg.d);
      Tensor sc = rows_of_elements(enc.subtitle, enc.sstream,
                                   cand.member_sentences, cfg.d);
      Tensor m_v = score_moment_features(vc, enc.hyp_all, m.mpn_video_lstm,
                                         m.mpn_regressor);
      Tensor m_s = score_moment_features(sc, enc.hyp_all, m.mpn_subtitle_lstm,
                                         m.mpn_regressor);
      if (cfg.mim_on_mpn) {
        auto [mv2, ms2] = modulate_moment_scores(m_v, m_s, alpha, cfg.modulation);
        m_v = mv2;
        m_s = ms2;
      }
      cand.m_v = m_v.item();
      cand.m_s = m_s.item();
      scored.push_back(
          {m_v, m_s, cand.label == CandidateLabel::positive});
    }
    if (opts.mode == ForwardMode::train) {
      Rng sample_rng(opts.sample_seed);
      cmr = cmr_loss(scored, cfg.margin, sample_rng);
    }
    const bool expand =
        opts.mode == ForwardMode::eval || cfg.expand_at_train;
    span = select_moment(set.candidates, expand ? cfg.expand_fraction : 0.0,
                         rec.timeline_length);
  }
  if (opts.forced_span) span = *opts.forced_span;
  out.trace.predicted_span = span;
  out.trace.iou = temporal_iou(span, rec.gt_moment);
  out.trace.cov = coverage(span, rec.gt_moment);

  // ----- stage 2: answer reasoning on the localized moment -----
  Tensor v_loc = rows_in_span(enc.video, enc.vstream, span, cfg.d);
  Tensor s_loc = rows_in_span(enc.subtitle, enc.sstream, span, cfg.d);

  // SA and C2C do not depend on the hypothesis; compute them once
  Tensor v_sa = cfg.use_sa ? self_attend(v_loc) : v_loc;
  Tensor s_sa = cfg.use_sa ? self_attend(s_loc) : s_loc;
  Tensor v_s, s_v;
  if (cfg.use_c2c) {
    v_s = dot_attention(v_sa, s_sa);
    s_v = dot_attention(s_sa, v_sa);
  }
  AnswerHead video_head{m.hrn_video_lstm, m.head_video_mlp, cfg.head_mode};
  AnswerHead subtitle_head{m.hrn_subtitle_lstm, m.head_subtitle_mlp,
                           cfg.head_mode};
  std::vector<Tensor> lv, ls;
  for (std::size_t k = 0; k < enc.hypotheses.size(); ++k) {
    Tensor h_sa = cfg.use_sa ? self_attend(enc.hypotheses[k]) : enc.hypotheses[k];
    Tensor v_h = dot_attention(v_sa, h_sa);
    Tensor s_h = dot_attention(s_sa, h_sa);
    HeterogeneousContext ctx;
    ctx.v_tilde = cfg.use_c2c ? concat_feature({v_sa, v_h, v_s})
                              : concat_feature({v_sa, v_h});
    ctx.s_tilde = cfg.use_c2c ? concat_feature({s_sa, s_h, s_v})
                              : concat_feature({s_sa, s_h});
    lv.push_back(head_score(ctx.v_tilde, video_head, k));
    ls.push_back(head_score(ctx.s_tilde, subtitle_head, k));
  }
  Tensor logits_v = stack_scalars(lv);
  Tensor logits_s = stack_scalars(ls);
  Tensor logits;
  if (cfg.mim_on_hrn) {
    Tensor beta = mim_alpha(enc.question_feature, m.beta_gate);
    out.trace.beta = beta.item();
    logits = blend_logits(logits_v, logits_s, beta);
  } else {
    logits = add(logits_v, logits_s);  // unweighted sum when the gate is off
  }

  out.ce = ce_loss(logits, rec.gt_answer);
  out.cmr = cmr;
  out.loss = cmr.has_value() ? add(out.ce, scale(*cmr, cfg.cmr_weight)) : out.ce;

  for (std::size_t k = 0; k < kNumAnswers; ++k) {
    out.trace.logits_v[k] = logits_v.at(k);
    out.trace.logits_s[k] = logits_s.at(k);
    out.trace.logits[k] = logits.at(k);
  }
  out.trace.predicted = 0;
  for (std::size_t k = 1; k < kNumAnswers; ++k)
    if (out.trace.logits[k] > out.trace.logits[out.trace.predicted])
      out.trace.predicted = k;
  out.trace.correct = out.trace.predicted == rec.gt_answer;
  return out;
}

}  // namespace msan
