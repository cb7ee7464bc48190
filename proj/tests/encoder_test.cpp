#include "msan/encoder.hpp"

#include <gtest/gtest.h>

#include "msan/grad_check.hpp"

using msan::ParamStore;
using msan::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, msan::Rng& rng,
                     bool requires_grad = false) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::matrix(r, c, v, requires_grad);
}

msan::BiRnnParams tied_birnn(ParamStore& store, std::size_t in, std::size_t d,
                             msan::Rng& rng) {
  auto p = msan::init_birnn(store, "enc", in, d, rng);
  p.w_bwd.values() = p.w_fwd.values();
  p.u_bwd.values() = p.u_fwd.values();
  p.b_bwd.values() = p.b_fwd.values();
  return p;
}

Tensor reversed_rows(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> v(n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) v[t * d + j] = x.at(n - 1 - t, j);
  return Tensor::matrix(n, d, v);
}

}  // namespace

TEST(Embed, PaddingMapsToZeroRow) {
  Tensor table = Tensor::matrix(3, 2, {0, 0, 1, 2, 3, 4});
  Tensor out = msan::embed({0}, table);
  EXPECT_EQ(out.values(), (std::vector<double>{0, 0}));
}

TEST(Embed, RepeatedTokenGivesIdenticalRows) {
  Tensor table = Tensor::matrix(3, 2, {0, 0, 1, 2, 3, 4});
  Tensor out = msan::embed({2, 2}, table);
  EXPECT_EQ(out.values(), (std::vector<double>{3, 4, 3, 4}));
}

TEST(Embed, UnknownIdIsVocabError) {
  Tensor table = Tensor::matrix(3, 2, std::vector<double>(6, 0.0));
  try {
    msan::embed({3}, table);
    FAIL();
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "vocab");
  }
}

TEST(Embed, OneTokenLossTouchesExactlyOneRow) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(0, "embed"));
  std::vector<double> v(5 * 3);
  for (double& x : v) x = rng.uniform(-1, 1);
  Tensor table = store.create("table", {5, 3}, v);
  Tensor loss = msan::sum_all(msan::embed({2}, table));
  msan::backward(loss);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_DOUBLE_EQ(table.grad()[r * 3 + c], r == 2 ? 1.0 : 0.0);
}

TEST(BiRnn, OutputShapeLaw) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(1, "birnn-shape"));
  auto p = msan::init_birnn(store, "enc", 3, 8, rng);
  for (std::size_t n : {1, 2, 5, 9}) {
    Tensor x = random_matrix(n, 3, rng);
    Tensor y = msan::birnn_encode(x, p);
    EXPECT_EQ(y.shape(), (msan::Shape{n, 8}));
    EXPECT_TRUE(msan::all_finite(y));
  }
}

TEST(BiRnn, EmptySequenceFails) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(2, "birnn-empty"));
  auto p = msan::init_birnn(store, "enc", 3, 4, rng);
  Tensor x = Tensor::from({0, 3}, {});
  try {
    msan::birnn_encode(x, p);
    FAIL();
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "empty-sequence");
  }
}

TEST(BiRnn, ReversingInputSwapsHalvesWithTiedWeights) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(3, "birnn-sym"));
  auto p = tied_birnn(store, 3, 8, rng);
  const std::size_t n = 5, h = 4;
  Tensor x = random_matrix(n, 3, rng);
  Tensor y = msan::birnn_encode(x, p);
  Tensor yr = msan::birnn_encode(reversed_rows(x), p);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < h; ++k) {
      EXPECT_DOUBLE_EQ(yr.at(t, k), y.at(n - 1 - t, h + k));
      EXPECT_DOUBLE_EQ(yr.at(t, h + k), y.at(n - 1 - t, k));
    }
}

TEST(BiRnn, ForwardHalfIsCausalBackwardHalfIsAntiCausal) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(4, "birnn-causal"));
  auto p = msan::init_birnn(store, "enc", 2, 6, rng);
  const std::size_t n = 6, h = 3;
  Tensor x = random_matrix(n, 2, rng);
  Tensor y = msan::birnn_encode(x, p);
  // perturb timestep 3; earlier rows keep their forward half, later rows
  // keep their backward half
  std::vector<double> v = x.values();
  v[3 * 2 + 1] += 0.5;
  Tensor y2 = msan::birnn_encode(Tensor::matrix(n, 2, v), p);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < h; ++k)
      EXPECT_DOUBLE_EQ(y2.at(t, k), y.at(t, k)) << "fwd row " << t;
  for (std::size_t t = 4; t < n; ++t)
    for (std::size_t k = 0; k < h; ++k)
      EXPECT_DOUBLE_EQ(y2.at(t, h + k), y.at(t, h + k)) << "bwd row " << t;
  // and the perturbed row itself changes
  bool changed = false;
  for (std::size_t k = 0; k < 2 * h; ++k)
    changed |= y2.at(3, k) != y.at(3, k);
  EXPECT_TRUE(changed);
}

TEST(BiRnn, OutputsBoundedByCellSaturation) {
  ParamStore store;
  msan::Rng rng(msan::named_seed(5, "birnn-bound"));
  auto p = msan::init_birnn(store, "enc", 2, 6, rng);
  Tensor x = random_matrix(12, 2, rng);
  Tensor y = msan::birnn_encode(x, p);
  for (double v : y.values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(BiRnn, GradCheckThroughRecurrence) {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    ParamStore store(seed);
    msan::Rng rng(msan::named_seed(seed, "birnn-gc"));
    auto p = msan::init_birnn(store, "enc", 3, 4, rng);
    std::vector<double> xv(6 * 3);
    for (double& v : xv) v = rng.uniform(-1, 1);
    store.create("x", {6, 3}, xv);
    auto f = [&p](ParamStore& s) {
      Tensor y = msan::birnn_encode(s.get("x"), p);
      return msan::sum_all(msan::mul(y, y));
    };
    auto report = msan::grad_check(f, store, 1e-5, 1e-4, 100, seed);
    EXPECT_TRUE(report.pass()) << "seed " << seed << ": " << report.max_rel_err;
  }
}

TEST(BiRnn, GradCheckThroughEmbeddingAndRecurrence) {
  ParamStore store(9);
  msan::Rng rng(msan::named_seed(9, "birnn-embed-gc"));
  auto p = msan::init_birnn(store, "enc", 3, 4, rng);
  std::vector<double> tv(6 * 3);
  for (double& v : tv) v = rng.uniform(-1, 1);
  for (std::size_t j = 0; j < 3; ++j) tv[j] = 0.0;  // padding row
  store.create("table", {6, 3}, tv);
  const std::vector<std::size_t> tokens = {1, 4, 2, 2, 0, 5};
  auto f = [&p, &tokens](ParamStore& s) {
    Tensor y = msan::birnn_encode(msan::embed(tokens, s.get("table")), p);
    return msan::sum_all(msan::mul(y, y));
  };
  auto report = msan::grad_check(f, store, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass()) << report.max_rel_err;
}
