#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "msan/tensor.hpp"

namespace msan {

// Slack for span-membership decisions; grid boundaries computed along
// different arithmetic routes can differ by a few ulp.
constexpr double kSpanEps = 1e-9;

struct Span {
  double begin = 0.0;
  double end = 0.0;

  double length() const { return end - begin; }
  bool valid() const { return begin < end; }
  bool operator==(const Span& other) const {
    return begin == other.begin && end == other.end;
  }
};

inline double overlap_length(const Span& a, const Span& b) {
  return std::min(a.end, b.end) - std::max(a.begin, b.begin);
}

inline bool spans_overlap(const Span& a, const Span& b) {
  return overlap_length(a, b) > kSpanEps;
}

// One sampled video frame: an ordered index plus the set of detected
// concept tokens (stored sorted and deduplicated).
struct Frame {
  std::size_t index = 0;
  std::vector<std::size_t> concepts;
};

struct Shot {
  Span span;
  std::vector<std::size_t> concepts;         // deduplicated union
  std::vector<std::size_t> action_concepts;  // at most 5
};

struct SubtitleSentence {
  Span span;
  std::vector<std::size_t> tokens;
};

// (localization modality, answer modality)
enum class ModalityLabel { SS, SV, VS, VV };

inline const char* modality_label_str(ModalityLabel l) {
  switch (l) {
    case ModalityLabel::SS: return "SS";
    case ModalityLabel::SV: return "SV";
    case ModalityLabel::VS: return "VS";
    case ModalityLabel::VV: return "VV";
  }
  return "??";
}

inline ModalityLabel modality_label_from(const std::string& s) {
  if (s == "SS") return ModalityLabel::SS;
  if (s == "SV") return ModalityLabel::SV;
  if (s == "VS") return ModalityLabel::VS;
  if (s == "VV") return ModalityLabel::VV;
  fail("validation", "unknown modality label '" + s + "'");
}

inline bool label_localizes_by_subtitle(ModalityLabel l) {
  return l == ModalityLabel::SS || l == ModalityLabel::SV;
}
inline bool label_answers_by_subtitle(ModalityLabel l) {
  return l == ModalityLabel::SS || l == ModalityLabel::VS;
}

constexpr std::size_t kNumAnswers = 5;
constexpr std::size_t kMaxActionConcepts = 5;
constexpr std::size_t kNumQuestionTypes = 6;

struct ClipRecord {
  std::vector<Shot> shots;
  std::vector<SubtitleSentence> sentences;
  std::vector<std::size_t> question_tokens;
  std::vector<std::vector<std::size_t>> answers;  // exactly 5
  std::size_t gt_answer = 0;
  Span gt_moment;
  ModalityLabel modality_label = ModalityLabel::SS;
  double timeline_length = 0.0;
};

// Token id layout: 0 is padding, then words, concepts and actions occupy
// consecutive disjoint ranges. The first kNumQuestionTypes word ids are
// question-type tags; ids 1..3 tag subtitle-answer questions and 4..6 tag
// video-answer questions.
struct Vocab {
  std::size_t words = 0;
  std::size_t concepts = 0;
  std::size_t actions = 0;
  std::size_t d_emb = 0;  // advisory; the model config decides

  static constexpr std::size_t pad_id = 0;

  std::size_t total() const { return 1 + words + concepts + actions; }
  std::size_t word_begin() const { return 1; }
  std::size_t word_end() const { return 1 + words; }
  std::size_t concept_begin() const { return word_end(); }
  std::size_t concept_end() const { return word_end() + concepts; }
  std::size_t action_begin() const { return concept_end(); }
  std::size_t action_end() const { return concept_end() + actions; }

  bool is_word(std::size_t id) const {
    return id >= word_begin() && id < word_end();
  }
  bool is_concept(std::size_t id) const {
    return id >= concept_begin() && id < concept_end();
  }
  bool is_action(std::size_t id) const {
    return id >= action_begin() && id < action_end();
  }
  bool in_range(std::size_t id) const { return id < total(); }

  // question-type tag of a record, or kNumQuestionTypes if untagged
  std::size_t question_type(const ClipRecord& rec) const {
    if (rec.question_tokens.empty()) return kNumQuestionTypes;
    const std::size_t first = rec.question_tokens.front();
    if (first >= 1 && first <= kNumQuestionTypes) return first - 1;
    return kNumQuestionTypes;
  }

  // paired action token for a visual concept
  std::size_t action_for_concept(std::size_t concept_id) const {
    if (!is_concept(concept_id) || actions == 0)
      fail("contract", "action_for_concept on non-concept id");
    return action_begin() + (concept_id - concept_begin()) % actions;
  }
};

inline const char* question_type_tag(std::size_t qt) {
  static const char* tags[] = {"who", "what", "where", "when", "why", "how", "other"};
  return tags[qt <= kNumQuestionTypes ? qt : kNumQuestionTypes];
}

// |A ∩ B| / |A ∪ B| over sorted unique id vectors
inline double set_iou(const std::vector<std::size_t>& a,
                      const std::vector<std::size_t>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Greedy left-to-right shot segmentation: a frame joins the current shot
// iff the IoU of its concept set with the running union exceeds the
// threshold. Frames map to uniform spans over [0, timeline_length].
inline std::vector<Shot> segment_shots(const std::vector<Frame>& frames,
                                       double timeline_length,
                                       double threshold = 0.3) {
  if (frames.empty()) fail("empty-input", "segment_shots on empty frame list");
  if (timeline_length <= 0.0) fail("contract", "timeline_length must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].concepts.empty())
      fail("contract", "frame " + std::to_string(i) + " has no concepts");
    if (i > 0 && frames[i].index <= frames[i - 1].index)
      fail("contract", "frame indices must be strictly increasing");
  }
  const double step = timeline_length / static_cast<double>(frames.size());
  std::vector<Shot> shots;
  std::vector<std::size_t> running;
  std::size_t shot_start = 0;
  auto flush = [&](std::size_t end_frame) {
    Shot s;
    s.span.begin = static_cast<double>(shot_start) * step;
    s.span.end = static_cast<double>(end_frame) * step;
    s.concepts = running;
    shots.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto set = sorted_unique(frames[i].concepts);
    if (i == 0) {
      running = set;
      continue;
    }
    if (set_iou(set, running) > threshold) {
      std::vector<std::size_t> merged(running);
      merged.insert(merged.end(), set.begin(), set.end());
      running = sorted_unique(std::move(merged));
    } else {
      flush(i);
      running = set;
      shot_start = i;
    }
  }
  flush(frames.size());
  // spans partition [0, timeline_length]; pin the last edge exactly
  shots.back().span.end = timeline_length;
  return shots;
}

inline void attach_action_concepts(
    std::vector<Shot>& shots,
    const std::vector<std::vector<std::size_t>>& labels) {
  if (labels.size() != shots.size())
    fail("contract", "attach_action_concepts needs one label list per shot, got " +
                         std::to_string(labels.size()) + " for " +
                         std::to_string(shots.size()) + " shots");
  for (std::size_t i = 0; i < shots.size(); ++i) {
    if (labels[i].size() > kMaxActionConcepts)
      fail("contract", "shot " + std::to_string(i) + " has " +
                           std::to_string(labels[i].size()) +
                           " action labels (max 5)");
    shots[i].action_concepts = labels[i];
  }
}

}  // namespace msan
