#include "msan/hrn.hpp"

#include <gtest/gtest.h>

#include "msan/grad_check.hpp"
#include "msan/param_store.hpp"
#include "msan/rng.hpp"

using msan::ParamStore;
using msan::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, msan::Rng& rng) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return Tensor::matrix(r, c, v);
}

// two-loop reference: similarities, row softmax, weighted sum
Tensor dot_attention_oracle(const Tensor& x, const Tensor& y) {
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();
  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> sim(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) sim[j] += x.at(i, k) * y.at(j, k);
    double mx = sim[0];
    for (double s : sim) mx = std::max(mx, s);
    double z = 0.0;
    for (double& s : sim) {
      s = std::exp(s - mx);
      z += s;
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += sim[j] / z * y.at(j, k);
  }
  return Tensor::matrix(m, d, out);
}

}  // namespace

TEST(DotAttention, SingleValueRowIsReturnedForEveryQuery) {
  msan::Rng rng(msan::named_seed(0, "attn-one"));
  Tensor x = random_matrix(4, 3, rng);
  Tensor y = random_matrix(1, 3, rng);
  Tensor out = msan::dot_attention(x, y);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_DOUBLE_EQ(out.at(i, k), y.at(0, k));
}

TEST(DotAttention, MatchesBruteForceOracleOn5x3) {
  msan::Rng rng(msan::named_seed(1, "attn-oracle"));
  Tensor x = random_matrix(5, 3, rng);
  Tensor y = random_matrix(4, 3, rng);
  Tensor got = msan::dot_attention(x, y);
  Tensor want = dot_attention_oracle(x, y);
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got.values()[i], want.values()[i], 1e-12);
}

TEST(DotAttention, OutputRowsInsideValueBoundingBox) {
  msan::Rng rng(msan::named_seed(2, "attn-hull"));
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.index(6), n = 1 + rng.index(6),
                      d = 1 + rng.index(6);
    Tensor x = random_matrix(m, d, rng);
    Tensor y = random_matrix(n, d, rng);
    Tensor out = msan::dot_attention(x, y);
    for (std::size_t k = 0; k < d; ++k) {
      double lo = y.at(0, k), hi = y.at(0, k);
      for (std::size_t j = 1; j < n; ++j) {
        lo = std::min(lo, y.at(j, k));
        hi = std::max(hi, y.at(j, k));
      }
      for (std::size_t i = 0; i < m; ++i) {
        ASSERT_GE(out.at(i, k), lo - 1e-9);
        ASSERT_LE(out.at(i, k), hi + 1e-9);
      }
    }
  }
}

TEST(DotAttention, WidthMismatchIsDimensionError) {
  msan::Rng rng(msan::named_seed(3, "attn-dim"));
  Tensor x = random_matrix(2, 3, rng);
  Tensor y = random_matrix(2, 4, rng);
  try {
    msan::dot_attention(x, y);
    FAIL();
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "dimension");
  }
}

TEST(DotAttention, PermutingValueRowsLeavesOutputUnchanged) {
  msan::Rng rng(msan::named_seed(4, "attn-perm"));
  Tensor x = random_matrix(3, 4, rng);
  Tensor y = random_matrix(5, 4, rng);
  std::vector<double> perm_vals(5 * 4);
  const std::vector<std::size_t> perm = {4, 2, 0, 1, 3};
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t k = 0; k < 4; ++k)
      perm_vals[j * 4 + k] = y.at(perm[j], k);
  Tensor out1 = msan::dot_attention(x, y);
  Tensor out2 = msan::dot_attention(x, Tensor::matrix(5, 4, perm_vals));
  for (std::size_t i = 0; i < out1.size(); ++i)
    EXPECT_NEAR(out1.values()[i], out2.values()[i], 1e-12);
}

TEST(SelfAttend, SingleRowUnchanged) {
  Tensor x = Tensor::matrix(1, 3, {0.3, -1.0, 2.0});
  Tensor out = msan::self_attend(x);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(out.at(0, k), x.at(0, k));
}

TEST(SelfAttend, IdenticalRowsPreserved) {
  Tensor x = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
  Tensor out = msan::self_attend(x);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(out.at(i, 0), 1.0, 1e-12);
    EXPECT_NEAR(out.at(i, 1), 2.0, 1e-12);
  }
}

TEST(SelfAttend, DefinitionallyDotAttentionWithItself) {
  msan::Rng rng(msan::named_seed(5, "sa-def"));
  Tensor x = random_matrix(4, 3, rng);
  EXPECT_EQ(msan::self_attend(x).values(), msan::dot_attention(x, x).values());
}

TEST(BuildHam, OutputWidthsAreThreeD) {
  msan::Rng rng(msan::named_seed(6, "ham-shape"));
  const std::size_t d = 5;
  Tensor v = random_matrix(4, d, rng), s = random_matrix(6, d, rng),
         h = random_matrix(3, d, rng);
  auto ctx = msan::build_ham(v, s, h);
  EXPECT_EQ(ctx.v_tilde.shape(), (msan::Shape{4, 3 * d}));
  EXPECT_EQ(ctx.s_tilde.shape(), (msan::Shape{6, 3 * d}));
}

TEST(BuildHam, MiddleBlockInsideHypothesisBoundingBox) {
  msan::Rng rng(msan::named_seed(7, "ham-hull"));
  const std::size_t d = 4;
  Tensor v = random_matrix(5, d, rng), s = random_matrix(4, d, rng),
         h = random_matrix(3, d, rng);
  auto ctx = msan::build_ham(v, s, h);
  // SA leaves rows of H inside the bounding box of H, so the C2Q block is
  // bounded by H's box as well
  for (std::size_t k = 0; k < d; ++k) {
    double lo = h.at(0, k), hi = h.at(0, k);
    for (std::size_t j = 1; j < h.rows(); ++j) {
      lo = std::min(lo, h.at(j, k));
      hi = std::max(hi, h.at(j, k));
    }
    for (std::size_t i = 0; i < ctx.v_tilde.rows(); ++i) {
      ASSERT_GE(ctx.v_tilde.at(i, d + k), lo - 1e-9);
      ASSERT_LE(ctx.v_tilde.at(i, d + k), hi + 1e-9);
    }
  }
}

TEST(BuildHam, MatchesCompositionOfUnits) {
  msan::Rng rng(msan::named_seed(8, "ham-comp"));
  const std::size_t d = 4;
  Tensor v = random_matrix(3, d, rng), s = random_matrix(5, d, rng),
         h = random_matrix(2, d, rng);
  auto ctx = msan::build_ham(v, s, h);
  Tensor va = msan::self_attend(v), sa = msan::self_attend(s),
         ha = msan::self_attend(h);
  Tensor want_v = msan::concat_feature(
      {va, msan::dot_attention(va, ha), msan::dot_attention(va, sa)});
  Tensor want_s = msan::concat_feature(
      {sa, msan::dot_attention(sa, ha), msan::dot_attention(sa, va)});
  EXPECT_EQ(ctx.v_tilde.values(), want_v.values());
  EXPECT_EQ(ctx.s_tilde.values(), want_s.values());
}

TEST(BuildHam, EmptyStreamNamesTheOffender) {
  msan::Rng rng(msan::named_seed(9, "ham-empty"));
  Tensor v = random_matrix(3, 4, rng);
  Tensor empty = Tensor::from({0, 4}, {});
  try {
    msan::build_ham(v, empty, v);
    FAIL();
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "empty-sequence");
    EXPECT_NE(std::string(e.what()).find("subtitle"), std::string::npos);
  }
}

TEST(BuildHam, AttentionUnitsOwnNoParameters) {
  // the HAM transform runs without touching any parameter store
  ParamStore store;
  msan::Rng rng(msan::named_seed(10, "ham-params"));
  Tensor v = random_matrix(2, 3, rng), s = random_matrix(2, 3, rng),
         h = random_matrix(2, 3, rng);
  auto ctx = msan::build_ham(v, s, h);
  EXPECT_EQ(store.count(), 0u);
  EXPECT_TRUE(msan::all_finite(ctx.v_tilde));
}

TEST(PredictLogits, PermutingHypothesesPermutesLogits) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(11, "logits-perm"));
  const std::size_t d = 4;
  msan::AnswerHead video_head{msan::init_birnn(store, "hv.lstm", 3 * d, d, rng),
                              msan::init_mlp(store, "hv.mlp", d, d, 1, rng),
                              msan::HeadMode::scalar_per_hypothesis};
  msan::AnswerHead subtitle_head{
      msan::init_birnn(store, "hs.lstm", 3 * d, d, rng),
      msan::init_mlp(store, "hs.mlp", d, d, 1, rng),
      msan::HeadMode::scalar_per_hypothesis};
  Tensor v = random_matrix(4, d, rng), s = random_matrix(3, d, rng);
  std::vector<msan::HeterogeneousContext> ctxs;
  for (std::size_t k = 0; k < 5; ++k)
    ctxs.push_back(msan::build_ham(v, s, random_matrix(3, d, rng)));
  auto [lv, ls] = msan::predict_logits(ctxs, video_head, subtitle_head);
  EXPECT_TRUE(msan::all_finite(lv));
  EXPECT_TRUE(msan::all_finite(ls));

  std::vector<msan::HeterogeneousContext> swapped = {ctxs[4], ctxs[3], ctxs[2],
                                                     ctxs[1], ctxs[0]};
  auto [lv2, ls2] = msan::predict_logits(swapped, video_head, subtitle_head);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(lv2.at(k), lv.at(4 - k));
    EXPECT_DOUBLE_EQ(ls2.at(k), ls.at(4 - k));
  }
}

TEST(BlendLogits, BetaOneGivesVideoLogits) {
  Tensor lv = Tensor::vector({1, 2, 3, 4, 5});
  Tensor ls = Tensor::vector({5, 4, 3, 2, 1});
  Tensor out = msan::blend_logits(lv, ls, Tensor::scalar(1.0));
  EXPECT_EQ(out.values(), lv.values());
}

TEST(BlendLogits, HalfAndHalfExample) {
  Tensor lv = Tensor::vector({1, 0, 0, 0, 0});
  Tensor ls = Tensor::vector({0, 1, 0, 0, 0});
  Tensor out = msan::blend_logits(lv, ls, Tensor::scalar(0.5));
  EXPECT_EQ(out.values(), (std::vector<double>{0.5, 0.5, 0, 0, 0}));
}

TEST(BlendLogits, SharedArgmaxSurvivesAnyBeta) {
  msan::Rng rng(msan::named_seed(12, "blend"));
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(5), b(5);
    for (double& x : a) x = rng.uniform(-3, 3);
    const std::size_t top = rng.index(5);
    for (std::size_t i = 0; i < 5; ++i) a[i] = i == top ? 5.0 : a[i] - 5.0;
    for (std::size_t i = 0; i < 5; ++i) b[i] = i == top ? 4.0 : rng.uniform(-3, 3) - 5.0;
    Tensor out = msan::blend_logits(Tensor::vector(a), Tensor::vector(b),
                                    Tensor::scalar(rng.uniform(1e-6, 1.0 - 1e-6)));
    std::size_t got = 0;
    for (std::size_t i = 1; i < 5; ++i)
      if (out.at(i) > out.at(got)) got = i;
    ASSERT_EQ(got, top);
  }
}

TEST(CeLoss, FiveWayContract) {
  Tensor l = Tensor::vector({0, 0, 0, 0, 0});
  EXPECT_NEAR(msan::ce_loss(l, 0).item(), std::log(5.0), 1e-12);
  EXPECT_THROW(msan::ce_loss(Tensor::vector({0, 0}), 0), msan::Error);
  EXPECT_THROW(msan::ce_loss(l, 7), msan::Error);
}

TEST(HrnGradCheck, ThroughHamHeadsAndBlend) {
  ParamStore store(0);
  msan::Rng rng(msan::named_seed(13, "hrn-gc"));
  const std::size_t d = 4;
  auto vh_lstm = msan::init_birnn(store, "hv.lstm", 3 * d, d, rng);
  auto vh_mlp = msan::init_mlp(store, "hv.mlp", d, d, 1, rng);
  auto sh_lstm = msan::init_birnn(store, "hs.lstm", 3 * d, d, rng);
  auto sh_mlp = msan::init_mlp(store, "hs.mlp", d, d, 1, rng);
  auto beta_gate = msan::init_mlp(store, "beta", d, d, 1, rng);
  std::vector<double> vv(3 * d), sv(3 * d), qv(d);
  for (double& x : vv) x = rng.uniform(-1, 1);
  for (double& x : sv) x = rng.uniform(-1, 1);
  for (double& x : qv) x = rng.uniform(-1, 1);
  store.create("x.v", {3, d}, vv);
  store.create("x.s", {3, d}, sv);
  store.create("x.q", {d}, qv);
  std::vector<Tensor> hyp;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> hv(2 * d);
    for (double& x : hv) x = rng.uniform(-1, 1);
    hyp.push_back(Tensor::matrix(2, d, hv));
  }
  auto f = [&](ParamStore& p) {
    msan::AnswerHead video_head{vh_lstm, vh_mlp,
                                msan::HeadMode::scalar_per_hypothesis};
    msan::AnswerHead subtitle_head{sh_lstm, sh_mlp,
                                   msan::HeadMode::scalar_per_hypothesis};
    std::vector<msan::HeterogeneousContext> ctxs;
    for (std::size_t k = 0; k < 5; ++k)
      ctxs.push_back(msan::build_ham(p.get("x.v"), p.get("x.s"), hyp[k]));
    auto [lv, ls] = msan::predict_logits(ctxs, video_head, subtitle_head);
    Tensor beta = msan::sigmoid(msan::pick(beta_gate.apply_vec(p.get("x.q")), 0));
    return msan::ce_loss(msan::blend_logits(lv, ls, beta), 2);
  };
  auto report = msan::grad_check(f, store, 1e-5, 1e-4, 40);
  EXPECT_TRUE(report.pass()) << report.max_rel_err;
}
