#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "msan/data.hpp"
#include "msan/rng.hpp"

namespace msan {

// Synthetic clips are laid out on a grid of `num_slots` equal slots; each
// slot is one scene (a run of frames sharing a concept set) and one
// subtitle sentence. The ground-truth moment is a contiguous run of
// slots. A localization cue appears only inside the moment in the
// localization modality; the answer cue only inside the moment in the
// answer modality; four distractor cues sit outside the moment so a model
// that refuses to localize sees five equally plausible answers.
struct GeneratorConfig {
  std::size_t num_records = 200;
  double timeline_length = 24.0;
  std::size_t num_slots = 6;
  std::size_t frames_per_slot = 3;
  std::size_t concepts_per_slot = 3;
  std::size_t words_per_sentence = 4;
  std::size_t question_len = 4;
  std::size_t answer_len = 2;
  std::size_t moment_slots_min = 1;
  std::size_t moment_slots_max = 2;
  std::array<double, 4> label_mix = {0.25, 0.25, 0.25, 0.25};  // SS SV VS VV
  std::size_t vocab_words = 160;
  std::size_t vocab_concepts = 80;
  std::size_t vocab_actions = 40;
  // Localization and answer cues come from disjoint pools, mirroring the
  // two-part question shape: the clause that pins the moment uses different
  // phrasing than the content that answers it.
  std::size_t loc_cue_words = 8;
  std::size_t loc_cue_concepts = 8;
  std::size_t cue_words = 16;     // answer + distractor word pool
  std::size_t cue_concepts = 16;  // answer + distractor concept pool
  std::size_t cue_repeat = 1;     // occurrences of each planted cue per sentence
  double shot_iou_threshold = 0.3;

  Vocab vocab() const {
    return Vocab{vocab_words, vocab_concepts, vocab_actions, 0};
  }

  void validate() const {
    if (num_records == 0) fail("config", "num_records must be positive");
    if (timeline_length <= 0.0) fail("config", "timeline_length must be positive");
    if (num_slots < 2) fail("config", "need at least 2 slots");
    if (frames_per_slot == 0) fail("config", "frames_per_slot must be positive");
    if (concepts_per_slot == 0) fail("config", "concepts_per_slot must be positive");
    if (moment_slots_min == 0 || moment_slots_min > moment_slots_max)
      fail("config", "moment slot bounds must satisfy 1 <= min <= max");
    if (moment_slots_max + kNumAnswers - 1 > num_slots)
      fail("config", "need at least " + std::to_string(kNumAnswers - 1) +
                         " slots outside the longest moment for distractors");
    if (words_per_sentence < 3)
      fail("config", "words_per_sentence must be at least 3 to host cues");
    if (question_len < 2) fail("config", "question_len must be at least 2");
    if (answer_len < 1) fail("config", "answer_len must be at least 1");
    double mix = 0.0;
    for (double p : label_mix) {
      if (p < 0.0) fail("config", "label_mix entries must be non-negative");
      mix += p;
    }
    if (std::abs(mix - 1.0) > 1e-9) fail("config", "label_mix must sum to 1");
    // cue pools must be big enough to keep all per-record cues distinct
    if (cue_words < kNumAnswers || cue_concepts < kNumAnswers)
      fail("config", "vocab too small: answer cue pools need at least " +
                         std::to_string(kNumAnswers) + " tokens");
    if (loc_cue_words == 0 || loc_cue_concepts == 0)
      fail("config", "vocab too small: localization cue pools are empty");
    if (vocab_words < kNumQuestionTypes + loc_cue_words + cue_words + 8)
      fail("config", "vocab too small: not enough filler words");
    if (vocab_concepts <
        loc_cue_concepts + cue_concepts + num_slots * concepts_per_slot)
      fail("config", "vocab too small: not enough base concepts for disjoint slots");
    if (vocab_actions == 0) fail("config", "need at least one action token");
  }
};

namespace detail {

struct TokenPools {
  // word ids
  std::size_t qtype_begin, loc_word_begin, ans_word_begin, filler_word_begin,
      word_end;
  // concept ids
  std::size_t loc_concept_begin, ans_concept_begin, base_concept_begin,
      concept_end;

  explicit TokenPools(const GeneratorConfig& cfg) {
    const Vocab v = cfg.vocab();
    qtype_begin = v.word_begin();
    loc_word_begin = qtype_begin + kNumQuestionTypes;
    ans_word_begin = loc_word_begin + cfg.loc_cue_words;
    filler_word_begin = ans_word_begin + cfg.cue_words;
    word_end = v.word_end();
    loc_concept_begin = v.concept_begin();
    ans_concept_begin = loc_concept_begin + cfg.loc_cue_concepts;
    base_concept_begin = ans_concept_begin + cfg.cue_concepts;
    concept_end = v.concept_end();
  }
};

}  // namespace detail

inline ClipRecord generate_record(const GeneratorConfig& cfg, std::uint64_t seed,
                                  std::size_t record_index) {
  const detail::TokenPools pools(cfg);
  Rng rng(named_seed(seed, "data", record_index));

  // modality label from the requested mix
  ModalityLabel label = ModalityLabel::VV;
  {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      acc += cfg.label_mix[i];
      if (u < acc) {
        label = static_cast<ModalityLabel>(i);
        break;
      }
    }
  }
  const bool loc_subtitle = label_localizes_by_subtitle(label);
  const bool ans_subtitle = label_answers_by_subtitle(label);

  // ground-truth moment on the slot grid
  const std::size_t moment_len = static_cast<std::size_t>(
      rng.int_range(static_cast<int>(cfg.moment_slots_min),
                    static_cast<int>(cfg.moment_slots_max)));
  const std::size_t moment_start = static_cast<std::size_t>(
      rng.int_range(0, static_cast<int>(cfg.num_slots - moment_len)));
  const double slot_len = cfg.timeline_length / static_cast<double>(cfg.num_slots);
  const auto slot_in_moment = [&](std::size_t s) {
    return s >= moment_start && s < moment_start + moment_len;
  };

  // cue tokens, all distinct within the record
  auto draw_distinct = [&rng](std::size_t begin, std::size_t count,
                              std::size_t k) {
    std::vector<std::size_t> ids = rng.sample_without_replacement(count, k);
    for (auto& id : ids) id += begin;
    return ids;
  };
  std::size_t loc_cue;
  std::size_t answer_cue;
  std::vector<std::size_t> distractor_cues;  // 4
  {
    const std::size_t loc_begin =
        loc_subtitle ? pools.loc_word_begin : pools.loc_concept_begin;
    const std::size_t loc_count =
        loc_subtitle ? cfg.loc_cue_words : cfg.loc_cue_concepts;
    const std::size_t ans_begin =
        ans_subtitle ? pools.ans_word_begin : pools.ans_concept_begin;
    const std::size_t ans_count = ans_subtitle ? cfg.cue_words : cfg.cue_concepts;
    loc_cue = draw_distinct(loc_begin, loc_count, 1)[0];
    auto ids = draw_distinct(ans_begin, ans_count, kNumAnswers);
    answer_cue = ids[0];
    distractor_cues.assign(ids.begin() + 1, ids.end());
  }

  // distractor cues live in slots outside the moment, round-robin
  std::vector<std::size_t> out_slots;
  for (std::size_t s = 0; s < cfg.num_slots; ++s)
    if (!slot_in_moment(s)) out_slots.push_back(s);
  rng.shuffle(out_slots);
  std::vector<std::vector<std::size_t>> distractors_in_slot(cfg.num_slots);
  for (std::size_t j = 0; j < distractor_cues.size(); ++j)
    distractors_in_slot[out_slots[j % out_slots.size()]].push_back(distractor_cues[j]);

  // subtitle track: one sentence per slot
  const std::size_t filler_words = pools.word_end - pools.filler_word_begin;
  auto filler_word = [&]() { return pools.filler_word_begin + rng.index(filler_words); };
  std::vector<SubtitleSentence> sentences(cfg.num_slots);
  for (std::size_t s = 0; s < cfg.num_slots; ++s) {
    auto& sent = sentences[s];
    sent.span = {static_cast<double>(s) * slot_len,
                 static_cast<double>(s + 1) * slot_len};
    sent.tokens.resize(cfg.words_per_sentence);
    for (auto& t : sent.tokens) t = filler_word();
    std::vector<std::size_t> planted;
    if (loc_subtitle && slot_in_moment(s)) planted.push_back(loc_cue);
    if (ans_subtitle && slot_in_moment(s)) planted.push_back(answer_cue);
    if (ans_subtitle)
      for (std::size_t d : distractors_in_slot[s]) planted.push_back(d);
    if (planted.size() > cfg.words_per_sentence)
      fail("config", "sentence too short to host " +
                         std::to_string(planted.size()) + " cue tokens");
    // one occurrence of each cue first, then repeats while space lasts
    std::vector<std::size_t> expanded = planted;
    for (std::size_t r = 1; r < cfg.cue_repeat; ++r)
      for (std::size_t cue : planted)
        if (expanded.size() < cfg.words_per_sentence) expanded.push_back(cue);
    auto positions =
        rng.sample_without_replacement(cfg.words_per_sentence, expanded.size());
    for (std::size_t k = 0; k < positions.size(); ++k)
      sent.tokens[positions[k]] = expanded[k];
  }
  sentences.back().span.end = cfg.timeline_length;

  // video track: frames_per_slot identical frames per slot; slot base
  // concept sets are mutually disjoint so segmentation recovers the grid
  std::vector<std::size_t> base =
      draw_distinct(pools.base_concept_begin,
                    pools.concept_end - pools.base_concept_begin,
                    cfg.num_slots * cfg.concepts_per_slot);
  std::vector<Frame> frames;
  std::vector<std::size_t> video_cue_of_slot(cfg.num_slots, 0);
  for (std::size_t s = 0; s < cfg.num_slots; ++s) {
    std::vector<std::size_t> set(base.begin() + s * cfg.concepts_per_slot,
                                 base.begin() + (s + 1) * cfg.concepts_per_slot);
    if (!loc_subtitle && slot_in_moment(s)) {
      set.push_back(loc_cue);
      video_cue_of_slot[s] = loc_cue;
    }
    if (!ans_subtitle && slot_in_moment(s)) {
      set.push_back(answer_cue);
      video_cue_of_slot[s] = answer_cue;
    }
    if (!ans_subtitle)
      for (std::size_t d : distractors_in_slot[s]) {
        set.push_back(d);
        video_cue_of_slot[s] = d;
      }
    set = sorted_unique(std::move(set));
    for (std::size_t f = 0; f < cfg.frames_per_slot; ++f) {
      Frame fr;
      fr.index = frames.size();
      fr.concepts = set;
      frames.push_back(std::move(fr));
    }
  }

  ClipRecord rec;
  rec.timeline_length = cfg.timeline_length;
  rec.shots = segment_shots(frames, cfg.timeline_length, cfg.shot_iou_threshold);

  // Action labels pair with the planted video cue when the shot has one.
  // In-moment slots of a (V,V) record can merge into one shot, so anchors
  // are resolved per shot, answer cue first.
  const Vocab vocab = cfg.vocab();
  std::vector<std::vector<std::size_t>> action_labels(rec.shots.size());
  for (std::size_t s = 0; s < rec.shots.size(); ++s) {
    const auto& con = rec.shots[s].concepts;
    auto has = [&con](std::size_t id) {
      return std::binary_search(con.begin(), con.end(), id);
    };
    std::size_t anchor = con.front();
    if (!ans_subtitle && has(answer_cue)) {
      anchor = answer_cue;
    } else if (!loc_subtitle && has(loc_cue)) {
      anchor = loc_cue;
    } else if (!ans_subtitle) {
      for (std::size_t d : distractor_cues)
        if (has(d)) {
          anchor = d;
          break;
        }
    }
    action_labels[s].push_back(vocab.action_for_concept(anchor));
  }
  attach_action_concepts(rec.shots, action_labels);

  rec.sentences = std::move(sentences);
  rec.gt_moment = {static_cast<double>(moment_start) * slot_len,
                   static_cast<double>(moment_start + moment_len) * slot_len};
  if (moment_start + moment_len == cfg.num_slots)
    rec.gt_moment.end = cfg.timeline_length;
  rec.modality_label = label;

  // question: [type tag, localization cue, filler...]
  const std::size_t qtype =
      ans_subtitle ? rng.index(3) : 3 + rng.index(3);
  rec.question_tokens = {pools.qtype_begin + qtype, loc_cue};
  while (rec.question_tokens.size() < cfg.question_len)
    rec.question_tokens.push_back(filler_word());

  // answers: the correct one references the answer cue, each distractor
  // references a cue planted outside the moment
  rec.gt_answer = rng.index(kNumAnswers);
  rec.answers.assign(kNumAnswers, {});
  std::size_t next_distractor = 0;
  for (std::size_t a = 0; a < kNumAnswers; ++a) {
    auto& ans = rec.answers[a];
    ans.push_back(a == rec.gt_answer ? answer_cue
                                     : distractor_cues[next_distractor++]);
    while (ans.size() < cfg.answer_len)
      ans.push_back(ans.size() < cfg.cue_repeat ? ans[0] : filler_word());
  }
  return rec;
}

inline std::vector<ClipRecord> generate_synthetic(const GeneratorConfig& cfg,
                                                  std::uint64_t seed) {
  cfg.validate();
  std::vector<ClipRecord> records;
  records.reserve(cfg.num_records);
  for (std::size_t i = 0; i < cfg.num_records; ++i)
    records.push_back(generate_record(cfg, seed, i));
  return records;
}

}  // namespace msan
