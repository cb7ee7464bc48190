#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msan/data.hpp"
#include "msan/generator.hpp"

namespace msan {

using Json = nlohmann::json;

struct Dataset {
  Vocab vocab;
  std::vector<ClipRecord> records;
};

namespace detail {

[[noreturn]] inline void record_fail(std::size_t index, const std::string& field,
                                     const std::string& what) {
  fail("validation", "record " + std::to_string(index) + ": field '" + field +
                         "': " + what);
}

inline Span parse_span(const Json& j, std::size_t index, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    record_fail(index, field, "expected [begin, end]");
  Span s{j[0].get<double>(), j[1].get<double>()};
  if (!s.valid()) record_fail(index, field, "span must satisfy begin < end");
  return s;
}

inline std::vector<std::size_t> parse_tokens(const Json& j, std::size_t index,
                                             const std::string& field,
                                             const Vocab& vocab,
                                             bool allow_empty = false) {
  if (!j.is_array()) record_fail(index, field, "expected token array");
  if (!allow_empty && j.empty()) record_fail(index, field, "must be nonempty");
  std::vector<std::size_t> out;
  for (const auto& t : j) {
    if (!t.is_number_unsigned())
      record_fail(index, field, "token ids must be non-negative integers");
    const std::size_t id = t.get<std::size_t>();
    if (!vocab.in_range(id))
      record_fail(index, field, "token id " + std::to_string(id) +
                                    " outside vocab of " +
                                    std::to_string(vocab.total()));
    out.push_back(id);
  }
  return out;
}

}  // namespace detail

inline Json record_to_json(const ClipRecord& rec) {
  Json j;
  Json shots = Json::array();
  for (const auto& s : rec.shots) {
    shots.push_back({{"span", {s.span.begin, s.span.end}},
                     {"concepts", s.concepts},
                     {"actions", s.action_concepts}});
  }
  Json sentences = Json::array();
  for (const auto& s : rec.sentences) {
    sentences.push_back({{"span", {s.span.begin, s.span.end}},
                         {"tokens", s.tokens}});
  }
  j["shots"] = std::move(shots);
  j["sentences"] = std::move(sentences);
  j["question"] = rec.question_tokens;
  j["answers"] = rec.answers;
  j["gt_answer"] = rec.gt_answer;
  j["gt_moment"] = {rec.gt_moment.begin, rec.gt_moment.end};
  j["modality_label"] = modality_label_str(rec.modality_label);
  j["timeline_length"] = rec.timeline_length;
  return j;
}

inline ClipRecord record_from_json(const Json& j, std::size_t index,
                                   const Vocab& vocab) {
  using detail::record_fail;
  if (!j.is_object()) record_fail(index, "<record>", "expected a JSON object");
  for (const char* key : {"shots", "sentences", "question", "answers",
                          "gt_answer", "gt_moment", "modality_label",
                          "timeline_length"}) {
    if (!j.contains(key)) record_fail(index, key, "missing");
  }
  ClipRecord rec;
  if (!j["timeline_length"].is_number() || j["timeline_length"].get<double>() <= 0.0)
    record_fail(index, "timeline_length", "must be a positive number");
  rec.timeline_length = j["timeline_length"].get<double>();

  if (!j["shots"].is_array() || j["shots"].empty())
    record_fail(index, "shots", "expected nonempty array");
  for (std::size_t s = 0; s < j["shots"].size(); ++s) {
    const auto& js = j["shots"][s];
    const std::string field = "shots[" + std::to_string(s) + "]";
    if (!js.is_object()) record_fail(index, field, "expected object");
    Shot shot;
    shot.span = detail::parse_span(js.value("span", Json()), index, field + ".span");
    shot.concepts = detail::parse_tokens(js.value("concepts", Json()), index,
                                         field + ".concepts", vocab);
    shot.action_concepts = detail::parse_tokens(
        js.value("actions", Json::array()), index, field + ".actions", vocab,
        /*allow_empty=*/true);
    if (shot.action_concepts.size() > kMaxActionConcepts)
      record_fail(index, field + ".actions", "at most 5 action concepts");
    rec.shots.push_back(std::move(shot));
  }
  for (std::size_t s = 1; s < rec.shots.size(); ++s) {
    if (std::abs(rec.shots[s].span.begin - rec.shots[s - 1].span.end) > kSpanEps)
      record_fail(index, "shots", "spans must tile the timeline in order");
  }
  if (std::abs(rec.shots.front().span.begin) > kSpanEps ||
      std::abs(rec.shots.back().span.end - rec.timeline_length) > kSpanEps)
    record_fail(index, "shots", "spans must cover [0, timeline_length]");

  if (!j["sentences"].is_array() || j["sentences"].empty())
    record_fail(index, "sentences", "expected nonempty array");
  for (std::size_t s = 0; s < j["sentences"].size(); ++s) {
    const auto& js = j["sentences"][s];
    const std::string field = "sentences[" + std::to_string(s) + "]";
    if (!js.is_object()) record_fail(index, field, "expected object");
    SubtitleSentence sent;
    sent.span = detail::parse_span(js.value("span", Json()), index, field + ".span");
    sent.tokens = detail::parse_tokens(js.value("tokens", Json()), index,
                                       field + ".tokens", vocab);
    rec.sentences.push_back(std::move(sent));
  }
  for (std::size_t s = 1; s < rec.sentences.size(); ++s) {
    if (rec.sentences[s].span.begin < rec.sentences[s - 1].span.end - kSpanEps)
      record_fail(index, "sentences", "spans must be sorted and non-overlapping");
  }

  rec.question_tokens =
      detail::parse_tokens(j["question"], index, "question", vocab);

  if (!j["answers"].is_array() || j["answers"].size() != kNumAnswers)
    record_fail(index, "answers",
                "expected exactly " + std::to_string(kNumAnswers) + " entries" +
                    (j["answers"].is_array()
                         ? ", got " + std::to_string(j["answers"].size())
                         : ""));
  for (std::size_t a = 0; a < kNumAnswers; ++a) {
    rec.answers.push_back(detail::parse_tokens(
        j["answers"][a], index, "answers[" + std::to_string(a) + "]", vocab));
  }

  if (!j["gt_answer"].is_number_unsigned() ||
      j["gt_answer"].get<std::size_t>() >= kNumAnswers)
    record_fail(index, "gt_answer", "must be an index in 0..4");
  rec.gt_answer = j["gt_answer"].get<std::size_t>();

  rec.gt_moment = detail::parse_span(j["gt_moment"], index, "gt_moment");
  if (rec.gt_moment.begin < -kSpanEps ||
      rec.gt_moment.end > rec.timeline_length + kSpanEps)
    record_fail(index, "gt_moment", "must lie within [0, timeline_length]");

  if (!j["modality_label"].is_string())
    record_fail(index, "modality_label", "expected one of SS/SV/VS/VV");
  try {
    rec.modality_label = modality_label_from(j["modality_label"].get<std::string>());
  } catch (const Error&) {
    record_fail(index, "modality_label", "expected one of SS/SV/VS/VV");
  }
  return rec;
}

inline std::string dataset_to_string(const Dataset& ds) {
  std::ostringstream out;
  Json header;
  header["kind"] = "msan-dataset";
  header["version"] = 1;
  header["vocab"] = {{"words", ds.vocab.words},
                     {"concepts", ds.vocab.concepts},
                     {"actions", ds.vocab.actions}};
  out << header.dump() << "\n";
  for (const auto& rec : ds.records) out << record_to_json(rec).dump() << "\n";
  return out.str();
}

inline Dataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail("validation", "empty dataset file");
  Json header = Json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("kind", "") != "msan-dataset")
    fail("validation", "header line: expected msan-dataset header object");
  if (!header.contains("vocab") || !header["vocab"].is_object())
    fail("validation", "header line: field 'vocab': missing");
  Dataset ds;
  const auto& v = header["vocab"];
  ds.vocab.words = v.value("words", std::size_t{0});
  ds.vocab.concepts = v.value("concepts", std::size_t{0});
  ds.vocab.actions = v.value("actions", std::size_t{0});
  if (ds.vocab.words == 0)
    fail("validation", "header line: field 'vocab.words': must be positive");
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail("validation", "record " + std::to_string(index) + ": field '<record>': invalid JSON");
    ds.records.push_back(record_from_json(j, index, ds.vocab));
    ++index;
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("io", "cannot write dataset " + path);
  const std::string text = dataset_to_string(ds);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail("io", "failed writing dataset " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("io", "cannot read dataset " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return dataset_from_string(buf.str());
}

// GeneratorConfig <-> JSON
inline GeneratorConfig generator_config_from_json(const Json& j) {
  if (!j.is_object()) fail("config", "generator config must be a JSON object");
  GeneratorConfig cfg;
  auto get_size = [&j](const char* key, std::size_t dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number_unsigned())
      fail("config", std::string("field '") + key + "' must be a non-negative integer");
    return j[key].get<std::size_t>();
  };
  auto get_double = [&j](const char* key, double dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number())
      fail("config", std::string("field '") + key + "' must be a number");
    return j[key].get<double>();
  };
  cfg.num_records = get_size("num_records", cfg.num_records);
  cfg.timeline_length = get_double("timeline_length", cfg.timeline_length);
  cfg.num_slots = get_size("num_slots", cfg.num_slots);
  cfg.frames_per_slot = get_size("frames_per_slot", cfg.frames_per_slot);
  cfg.concepts_per_slot = get_size("concepts_per_slot", cfg.concepts_per_slot);
  cfg.words_per_sentence = get_size("words_per_sentence", cfg.words_per_sentence);
  cfg.question_len = get_size("question_len", cfg.question_len);
  cfg.answer_len = get_size("answer_len", cfg.answer_len);
  cfg.moment_slots_min = get_size("moment_slots_min", cfg.moment_slots_min);
  cfg.moment_slots_max = get_size("moment_slots_max", cfg.moment_slots_max);
  cfg.vocab_words = get_size("vocab_words", cfg.vocab_words);
  cfg.vocab_concepts = get_size("vocab_concepts", cfg.vocab_concepts);
  cfg.vocab_actions = get_size("vocab_actions", cfg.vocab_actions);
  cfg.cue_words = get_size("cue_words", cfg.cue_words);
  cfg.cue_concepts = get_size("cue_concepts", cfg.cue_concepts);
  cfg.shot_iou_threshold = get_double("shot_iou_threshold", cfg.shot_iou_threshold);
  if (j.contains("label_mix")) {
    const auto& mix = j["label_mix"];
    if (!mix.is_array() || mix.size() != 4)
      fail("config", "label_mix must be an array of 4 probabilities (SS,SV,VS,VV)");
    for (std::size_t i = 0; i < 4; ++i) {
      if (!mix[i].is_number()) fail("config", "label_mix entries must be numbers");
      cfg.label_mix[i] = mix[i].get<double>();
    }
  }
  cfg.validate();
  return cfg;
}

inline Json generator_config_to_json(const GeneratorConfig& cfg) {
  Json j;
  j["num_records"] = cfg.num_records;
  j["timeline_length"] = cfg.timeline_length;
  j["num_slots"] = cfg.num_slots;
  j["frames_per_slot"] = cfg.frames_per_slot;
  j["concepts_per_slot"] = cfg.concepts_per_slot;
  j["words_per_sentence"] = cfg.words_per_sentence;
  j["question_len"] = cfg.question_len;
  j["answer_len"] = cfg.answer_len;
  j["moment_slots_min"] = cfg.moment_slots_min;
  j["moment_slots_max"] = cfg.moment_slots_max;
  j["label_mix"] = cfg.label_mix;
  j["vocab_words"] = cfg.vocab_words;
  j["vocab_concepts"] = cfg.vocab_concepts;
  j["vocab_actions"] = cfg.vocab_actions;
  j["cue_words"] = cfg.cue_words;
  j["cue_concepts"] = cfg.cue_concepts;
  j["shot_iou_threshold"] = cfg.shot_iou_threshold;
  return j;
}

}  // namespace msan
