#include "msan/grad_check.hpp"

#include <gtest/gtest.h>

#include "msan/param_store.hpp"
#include "msan/rng.hpp"
#include "msan/tensor.hpp"

using msan::ParamStore;
using msan::Tensor;

namespace {

ParamStore make_store(std::uint64_t seed,
                      const std::vector<std::pair<std::string, msan::Shape>>& specs) {
  ParamStore store(seed);
  msan::Rng rng(msan::named_seed(seed, "init"));
  for (const auto& [name, shape] : specs) {
    std::vector<double> v(msan::shape_numel(shape));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    store.create(name, shape, v);
  }
  return store;
}

}  // namespace

TEST(GradCheck, LinearFunctionIsExactUpToRoundoff) {
  ParamStore store = make_store(0, {{"w", {3, 3}}});
  auto f = [](ParamStore& p) { return msan::sum_all(p.get("w")); };
  auto report = msan::grad_check(f, store);
  EXPECT_TRUE(report.pass());
  EXPECT_LT(report.max_rel_err, 1e-8);
}

TEST(GradCheck, SoftmaxMatmulChainPasses) {
  ParamStore store = make_store(0, {{"a", {4, 3}}, {"b", {3, 5}}});
  auto f = [](ParamStore& p) {
    Tensor y = msan::softmax_rows(msan::matmul(p.get("a"), p.get("b")));
    return msan::sum_all(msan::mul(y, y));
  };
  auto report = msan::grad_check(f, store, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass()) << report.max_rel_err;
}

TEST(GradCheck, EveryCoreOpPasses) {
  ParamStore store = make_store(7, {{"a", {4, 4}}, {"b", {4, 4}}, {"v", {4}}});
  struct Case {
    const char* name;
    std::function<Tensor(ParamStore&)> f;
  };
  const std::vector<Case> cases = {
      {"matmul", [](ParamStore& p) {
         return msan::sum_all(msan::matmul(p.get("a"), p.get("b")));
       }},
      {"transpose", [](ParamStore& p) {
         return msan::sum_all(msan::matmul(p.get("a"), msan::transpose(p.get("b"))));
       }},
      {"softmax", [](ParamStore& p) {
         Tensor y = msan::softmax_rows(p.get("a"));
         return msan::sum_all(msan::mul(y, p.get("b")));
       }},
      {"relu", [](ParamStore& p) {
         return msan::sum_all(msan::relu(p.get("a")));
       }},
      {"sigmoid", [](ParamStore& p) {
         return msan::sum_all(msan::sigmoid(p.get("a")));
       }},
      {"tanh", [](ParamStore& p) {
         return msan::sum_all(msan::tanh_op(p.get("a")));
       }},
      {"add_mul_sub", [](ParamStore& p) {
         Tensor s = msan::sub(p.get("a"), p.get("b"));
         return msan::sum_all(msan::mul(msan::add(s, p.get("a")), s));
       }},
      {"scalar_broadcast", [](ParamStore& p) {
         Tensor s = msan::pick(msan::maxpool_time(p.get("a")), 0);
         return msan::sum_all(msan::mul(p.get("b"), s));
       }},
      {"concat_feature", [](ParamStore& p) {
         Tensor c = msan::concat_feature({p.get("a"), p.get("b")});
         return msan::sum_all(msan::mul(c, c));
       }},
      {"concat_rows", [](ParamStore& p) {
         Tensor c = msan::concat_rows({p.get("a"), p.get("b")});
         return msan::sum_all(msan::mul(c, c));
       }},
      {"gather_rows", [](ParamStore& p) {
         Tensor g = msan::gather_rows(p.get("a"), {0, 2, 2, 3});
         return msan::sum_all(msan::mul(g, g));
       }},
      {"maxpool", [](ParamStore& p) {
         Tensor y = msan::maxpool_time(p.get("a"));
         return msan::sum_all(msan::mul(y, y));
       }},
      {"meanpool", [](ParamStore& p) {
         Tensor y = msan::meanpool_time(p.get("a"));
         return msan::sum_all(msan::mul(y, y));
       }},
      {"cross_entropy", [](ParamStore& p) {
         return msan::cross_entropy(p.get("v"), 2);
       }},
      {"stack_pick", [](ParamStore& p) {
         Tensor v = p.get("v");
         Tensor s = msan::stack_scalars(
             {msan::pick(v, 0), msan::pick(v, 3), msan::pick(v, 1)});
         return msan::sum_all(msan::mul(s, s));
       }},
      {"reshape", [](ParamStore& p) {
         Tensor r = msan::as_row(p.get("v"));
         return msan::sum_all(msan::matmul(r, p.get("a")));
       }},
  };
  for (const auto& c : cases) {
    auto report = msan::grad_check(c.f, store, 1e-5, 1e-4);
    EXPECT_TRUE(report.pass()) << c.name << ": " << report.max_rel_err;
  }
}

TEST(GradCheck, CorruptedBackwardFails) {
  ParamStore store = make_store(3, {{"w", {3, 3}}});
  // forward is w*w but the hand-written backward is off by a factor of 2
  auto f = [](ParamStore& p) {
    Tensor w = p.get("w");
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      out[i] = w.values()[i] * w.values()[i];
    auto node = std::make_shared<msan::TensorNode>();
    node->shape = w.shape();
    node->values = std::move(out);
    node->requires_grad = true;
    node->parents = {w.node()};
    node->backward = [](msan::TensorNode& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        p->grad[i] += self.grad[i] * p->values[i];  // should be 2*w
    };
    return msan::sum_all(Tensor(node));
  };
  auto report = msan::grad_check(f, store, 1e-5, 1e-4);
  EXPECT_FALSE(report.pass());
}

TEST(GradCheck, NonDeterministicFunctionIsDetected) {
  ParamStore store = make_store(4, {{"w", {2, 2}}});
  int calls = 0;
  auto f = [&calls](ParamStore& p) {
    ++calls;
    return msan::mul(msan::sum_all(p.get("w")),
                     Tensor::scalar(static_cast<double>(calls)));
  };
  try {
    msan::grad_check(f, store);
    FAIL() << "expected determinism error";
  } catch (const msan::Error& e) {
    EXPECT_EQ(e.category(), "determinism");
  }
}

TEST(ParamStore, ZeroGradsAndSortedIteration) {
  ParamStore store = make_store(5, {{"b", {2}}, {"a", {2}}, {"c", {1}}});
  std::vector<std::string> names;
  for (const auto& [name, t] : store.all()) names.push_back(name);
  EXPECT_EQ(names, (std::vector<std::string>{"a", "b", "c"}));

  Tensor loss = msan::sum_all(msan::mul(store.get("a"), store.get("a")));
  msan::backward(loss);
  EXPECT_NE(store.get("a").grad(), std::vector<double>(2, 0.0));
  store.zero_grads();
  EXPECT_EQ(store.get("a").grad(), std::vector<double>(2, 0.0));
}

TEST(ParamStore, CheckpointRoundTripIsValueExact) {
  ParamStore store = make_store(6, {{"x", {3, 2}}, {"y", {5}}});
  store.set_metadata("{\"d\":64}");
  auto bytes = store.to_bytes();
  ParamStore back = ParamStore::from_bytes(bytes);
  EXPECT_EQ(back.metadata(), store.metadata());
  EXPECT_EQ(back.count(), store.count());
  for (const auto& [name, t] : store.all()) {
    ASSERT_TRUE(back.has(name));
    EXPECT_EQ(back.get(name).shape(), t.shape());
    EXPECT_EQ(back.get(name).values(), t.values());  // bitwise
  }
  EXPECT_EQ(back.to_bytes(), bytes);
}

TEST(ParamStore, DuplicateNameRejected) {
  ParamStore store;
  store.create_zeros("w", {2});
  EXPECT_THROW(store.create_zeros("w", {2}), msan::Error);
}
