#include "msan/data.hpp"

#include <gtest/gtest.h>

#include <set>

#include "msan/dataset_io.hpp"
#include "msan/generator.hpp"

using msan::ClipRecord;
using msan::Frame;
using msan::GeneratorConfig;

namespace {

std::vector<Frame> make_frames(std::vector<std::vector<std::size_t>> sets) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < sets.size(); ++i)
    out.push_back({i, std::move(sets[i])});
  return out;
}

// brute-force set IoU over std::set, independent of the sorted-vector path
double set_iou_oracle(const std::vector<std::size_t>& a,
                      const std::vector<std::size_t>& b) {
  std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (auto x : sa) inter += sb.count(x);
  std::set<std::size_t> uni = sa;
  uni.insert(sb.begin(), sb.end());
  return uni.empty() ? 0.0
                     : static_cast<double>(inter) / static_cast<double>(uni.size());
}

// cue tokens planted in context inside/outside the gt moment
bool cue_in_context(const ClipRecord& rec, std::size_t cue, bool inside) {
  for (const auto& shot : rec.shots) {
    const bool in = msan::spans_overlap(shot.span, rec.gt_moment);
    if (in != inside) continue;
    for (auto c : shot.concepts)
      if (c == cue) return true;
  }
  for (const auto& sent : rec.sentences) {
    const bool in = msan::spans_overlap(sent.span, rec.gt_moment);
    if (in != inside) continue;
    for (auto t : sent.tokens)
      if (t == cue) return true;
  }
  return false;
}

}  // namespace

TEST(SetIou, MatchesBruteForceOracle) {
  msan::Rng rng(msan::named_seed(0, "set-iou"));
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < rng.index(8); ++i) a.push_back(1 + rng.index(10));
    for (std::size_t i = 0; i < rng.index(8); ++i) b.push_back(1 + rng.index(10));
    a = msan::sorted_unique(a);
    b = msan::sorted_unique(b);
    ASSERT_DOUBLE_EQ(msan::set_iou(a, b), set_iou_oracle(a, b));
  }
}

TEST(SegmentShots, IdenticalSetsGiveOneShot) {
  auto frames = make_frames({{1, 2}, {1, 2}, {1, 2}});
  auto shots = msan::segment_shots(frames, 9.0);
  ASSERT_EQ(shots.size(), 1u);
  EXPECT_DOUBLE_EQ(shots[0].span.begin, 0.0);
  EXPECT_DOUBLE_EQ(shots[0].span.end, 9.0);
  EXPECT_EQ(shots[0].concepts, (std::vector<std::size_t>{1, 2}));
}

TEST(SegmentShots, IoUAboveThresholdMerges) {
  // {a,b,c} then {b,c,d}: IoU = 2/4 = 0.5 > 0.3, so they merge
  auto frames = make_frames({{1, 2, 3}, {2, 3, 4}});
  auto shots = msan::segment_shots(frames, 2.0);
  ASSERT_EQ(shots.size(), 1u);
  EXPECT_EQ(shots[0].concepts, (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(SegmentShots, DisjointSetsSplit) {
  auto frames = make_frames({{1}, {2}});
  auto shots = msan::segment_shots(frames, 2.0);
  ASSERT_EQ(shots.size(), 2u);
  EXPECT_DOUBLE_EQ(shots[0].span.end, 1.0);
  EXPECT_DOUBLE_EQ(shots[1].span.begin, 1.0);
}

TEST(SegmentShots, SpansPartitionTimeline) {
  msan::Rng rng(msan::named_seed(1, "segment"));
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<std::size_t>> sets;
    const std::size_t n = 1 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> s;
      const std::size_t k = 1 + rng.index(4);
      for (std::size_t j = 0; j < k; ++j) s.push_back(1 + rng.index(6));
      sets.push_back(msan::sorted_unique(s));
    }
    const double timeline = 1.0 + rng.uniform(0, 20);
    auto shots = msan::segment_shots(make_frames(sets), timeline);
    ASSERT_GE(shots.size(), 1u);
    EXPECT_DOUBLE_EQ(shots.front().span.begin, 0.0);
    EXPECT_DOUBLE_EQ(shots.back().span.end, timeline);
    for (std::size_t i = 1; i < shots.size(); ++i)
      EXPECT_DOUBLE_EQ(shots[i].span.begin, shots[i - 1].span.end);
  }
}

TEST(SegmentShots, EmptyInputFails) {
  try {
    msan::segment_shots({}, 1.0);
    FAIL();
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "empty-input");
  }
}

TEST(AttachActionConcepts, EmptyLabelListLeavesShotUnchanged) {
  auto shots = msan::segment_shots(make_frames({{1}}), 1.0);
  msan::attach_action_concepts(shots, {{}});
  EXPECT_TRUE(shots[0].action_concepts.empty());
}

TEST(AttachActionConcepts, LabelsAppendInOrder) {
  auto shots = msan::segment_shots(make_frames({{1}}), 1.0);
  msan::attach_action_concepts(shots, {{7, 8}});
  EXPECT_EQ(shots[0].action_concepts, (std::vector<std::size_t>{7, 8}));
}

TEST(AttachActionConcepts, MoreThanFiveLabelsRejected) {
  auto shots = msan::segment_shots(make_frames({{1}}), 1.0);
  EXPECT_THROW(msan::attach_action_concepts(shots, {{1, 2, 3, 4, 5, 6}}),
               msan::Error);
}

TEST(Generator, DeterministicBytesPerSeed) {
  GeneratorConfig cfg;
  cfg.num_records = 40;
  msan::Dataset a{cfg.vocab(), msan::generate_synthetic(cfg, 7)};
  msan::Dataset b{cfg.vocab(), msan::generate_synthetic(cfg, 7)};
  EXPECT_EQ(msan::dataset_to_string(a), msan::dataset_to_string(b));
  msan::Dataset c{cfg.vocab(), msan::generate_synthetic(cfg, 8)};
  EXPECT_NE(msan::dataset_to_string(a), msan::dataset_to_string(c));
}

TEST(Generator, ExactlyOneAnswerReferencesTheAnswerCue) {
  GeneratorConfig cfg;
  cfg.num_records = 60;
  auto records = msan::generate_synthetic(cfg, 3);
  for (const auto& rec : records) {
    // the answer cue is the distinguished first token of the correct answer
    const std::size_t cue = rec.answers[rec.gt_answer][0];
    int holders = 0;
    for (const auto& ans : rec.answers) {
      if (std::find(ans.begin(), ans.end(), cue) != ans.end()) ++holders;
    }
    EXPECT_EQ(holders, 1);
  }
}

TEST(Generator, AnswerCueAppearsOnlyInsideTheMoment) {
  GeneratorConfig cfg;
  cfg.num_records = 80;
  auto records = msan::generate_synthetic(cfg, 11);
  for (const auto& rec : records) {
    const std::size_t cue = rec.answers[rec.gt_answer][0];
    EXPECT_TRUE(cue_in_context(rec, cue, /*inside=*/true));
    EXPECT_FALSE(cue_in_context(rec, cue, /*inside=*/false));
  }
}

TEST(Generator, DistractorCuesLiveOutsideTheMoment) {
  GeneratorConfig cfg;
  cfg.num_records = 80;
  auto records = msan::generate_synthetic(cfg, 12);
  for (const auto& rec : records) {
    for (std::size_t a = 0; a < msan::kNumAnswers; ++a) {
      if (a == rec.gt_answer) continue;
      const std::size_t cue = rec.answers[a][0];
      EXPECT_TRUE(cue_in_context(rec, cue, /*inside=*/false));
      EXPECT_FALSE(cue_in_context(rec, cue, /*inside=*/true));
    }
  }
}

TEST(Generator, LocalizationCueOnlyInsideMomentInLocModality) {
  GeneratorConfig cfg;
  cfg.num_records = 80;
  auto records = msan::generate_synthetic(cfg, 13);
  for (const auto& rec : records) {
    const std::size_t loc_cue = rec.question_tokens[1];
    const bool subtitle = msan::label_localizes_by_subtitle(rec.modality_label);
    const msan::Vocab vocab = cfg.vocab();
    EXPECT_EQ(vocab.is_word(loc_cue), subtitle);
    EXPECT_TRUE(cue_in_context(rec, loc_cue, true));
    EXPECT_FALSE(cue_in_context(rec, loc_cue, false));
  }
}

TEST(Generator, ActionTokensPairWithPlantedVideoCue) {
  GeneratorConfig cfg;
  cfg.num_records = 60;
  const msan::Vocab vocab = cfg.vocab();
  auto records = msan::generate_synthetic(cfg, 21);
  for (const auto& rec : records) {
    if (msan::label_answers_by_subtitle(rec.modality_label)) continue;
    const std::size_t cue = rec.answers[rec.gt_answer][0];
    for (const auto& shot : rec.shots) {
      if (!std::binary_search(shot.concepts.begin(), shot.concepts.end(), cue))
        continue;
      ASSERT_FALSE(shot.action_concepts.empty());
      EXPECT_EQ(shot.action_concepts[0], vocab.action_for_concept(cue));
    }
  }
}

TEST(Generator, LabelMixWithinTwoPercentAtTenThousand) {
  GeneratorConfig cfg;
  cfg.num_records = 10000;
  auto records = msan::generate_synthetic(cfg, 0);
  std::array<std::size_t, 4> counts{0, 0, 0, 0};
  for (const auto& rec : records)
    counts[static_cast<std::size_t>(rec.modality_label)]++;
  for (std::size_t i = 0; i < 4; ++i) {
    const double frac =
        static_cast<double>(counts[i]) / static_cast<double>(cfg.num_records);
    EXPECT_NEAR(frac, 0.25, 0.02) << "label " << i;
  }
}

TEST(Generator, BadConfigRejected) {
  GeneratorConfig cfg;
  cfg.cue_words = 2;
  EXPECT_THROW(msan::generate_synthetic(cfg, 0), msan::Error);
  GeneratorConfig cfg2;
  cfg2.label_mix = {0.5, 0.5, 0.5, 0.5};
  EXPECT_THROW(msan::generate_synthetic(cfg2, 0), msan::Error);
  GeneratorConfig cfg3;
  cfg3.num_slots = 4;  // cannot host 4 distractor slots next to a 2-slot moment
  EXPECT_THROW(msan::generate_synthetic(cfg3, 0), msan::Error);
}

TEST(DatasetIo, SaveLoadRoundTripStructurallyEqual) {
  GeneratorConfig cfg;
  cfg.num_records = 25;
  msan::Dataset ds{cfg.vocab(), msan::generate_synthetic(cfg, 5)};
  const std::string text = msan::dataset_to_string(ds);
  msan::Dataset back = msan::dataset_from_string(text);
  ASSERT_EQ(back.records.size(), ds.records.size());
  EXPECT_EQ(back.vocab.words, ds.vocab.words);
  // re-serialization must be byte-identical
  EXPECT_EQ(msan::dataset_to_string(back), text);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& a = ds.records[i];
    const auto& b = back.records[i];
    EXPECT_EQ(a.gt_answer, b.gt_answer);
    EXPECT_EQ(a.modality_label, b.modality_label);
    EXPECT_EQ(a.question_tokens, b.question_tokens);
    EXPECT_EQ(a.answers, b.answers);
    EXPECT_TRUE(a.gt_moment == b.gt_moment);
    ASSERT_EQ(a.shots.size(), b.shots.size());
    for (std::size_t s = 0; s < a.shots.size(); ++s) {
      EXPECT_EQ(a.shots[s].concepts, b.shots[s].concepts);
      EXPECT_EQ(a.shots[s].action_concepts, b.shots[s].action_concepts);
      EXPECT_TRUE(a.shots[s].span == b.shots[s].span);
    }
  }
}

TEST(DatasetIo, FileRoundTrip) {
  GeneratorConfig cfg;
  cfg.num_records = 10;
  msan::Dataset ds{cfg.vocab(), msan::generate_synthetic(cfg, 9)};
  const std::string path = ::testing::TempDir() + "msan_ds_roundtrip.jsonl";
  msan::save_dataset(ds, path);
  msan::Dataset back = msan::load_dataset(path);
  EXPECT_EQ(msan::dataset_to_string(back), msan::dataset_to_string(ds));
}

TEST(DatasetIo, MalformedRecordsNameIndexAndField) {
  GeneratorConfig cfg;
  cfg.num_records = 2;
  msan::Dataset ds{cfg.vocab(), msan::generate_synthetic(cfg, 1)};
  const msan::Json good = msan::record_to_json(ds.records[1]);

  struct Fixture {
    const char* name;
    std::function<void(msan::Json&)> corrupt;
    const char* want_field;
  };
  const std::vector<Fixture> fixtures = {
      {"missing gt_moment", [](msan::Json& j) { j.erase("gt_moment"); },
       "gt_moment"},
      {"inverted gt_moment",
       [](msan::Json& j) { j["gt_moment"] = {9.0, 3.0}; }, "gt_moment"},
      {"gt_moment outside timeline",
       [](msan::Json& j) { j["gt_moment"] = {0.0, 999.0}; }, "gt_moment"},
      {"four answers", [](msan::Json& j) { j["answers"].erase(4); }, "answers"},
      {"gt_answer out of range", [](msan::Json& j) { j["gt_answer"] = 5; },
       "gt_answer"},
      {"bad modality label",
       [](msan::Json& j) { j["modality_label"] = "XX"; }, "modality_label"},
      {"token outside vocab",
       [](msan::Json& j) { j["question"][0] = 1000000; }, "question"},
      {"empty sentence tokens",
       [](msan::Json& j) { j["sentences"][0]["tokens"] = msan::Json::array(); },
       "sentences[0].tokens"},
      {"six action concepts",
       [](msan::Json& j) {
         j["shots"][0]["actions"] = {300, 300, 300, 300, 300, 300};
       },
       "shots[0].actions"},
      {"non-positive timeline",
       [](msan::Json& j) { j["timeline_length"] = 0.0; }, "timeline_length"},
  };
  ASSERT_EQ(fixtures.size(), 10u);
  for (const auto& fx : fixtures) {
    msan::Json bad = good;
    fx.corrupt(bad);
    const std::string text = msan::dataset_to_string({ds.vocab, {ds.records[0]}}) +
                             bad.dump() + "\n";
    try {
      msan::dataset_from_string(text);
      FAIL() << fx.name;
    } catch (const msan::Error& e) {
      EXPECT_EQ(e.category(), "validation") << fx.name;
      EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos)
          << fx.name << ": " << e.what();
      EXPECT_NE(std::string(e.what()).find(fx.want_field), std::string::npos)
          << fx.name << ": " << e.what();
    }
  }
}

TEST(GeneratorConfigJson, RoundTripAndValidation) {
  GeneratorConfig cfg;
  cfg.num_records = 123;
  cfg.label_mix = {0.1, 0.2, 0.3, 0.4};
  msan::Json j = msan::generator_config_to_json(cfg);
  GeneratorConfig back = msan::generator_config_from_json(j);
  EXPECT_EQ(back.num_records, 123u);
  EXPECT_DOUBLE_EQ(back.label_mix[3], 0.4);

  msan::Json bad = j;
  bad["label_mix"] = {1.0, 1.0};
  EXPECT_THROW(msan::generator_config_from_json(bad), msan::Error);
}
