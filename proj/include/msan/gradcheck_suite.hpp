#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msan/generator.hpp"
#include "msan/grad_check.hpp"
#include "msan/model.hpp"

namespace msan {

struct GradCheckSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

// Small model + record fixture for end-to-end checks.
struct ModelFixture {
  GeneratorConfig gcfg;
  MsanConfig mcfg;
  MsanModel model;
  ClipRecord record;
};

inline ModelFixture make_model_fixture(std::uint64_t seed) {
  ModelFixture fx;
  fx.gcfg.num_records = 1;
  fx.gcfg.timeline_length = 12.0;
  fx.gcfg.num_slots = 6;
  fx.gcfg.frames_per_slot = 2;
  fx.gcfg.concepts_per_slot = 2;
  fx.gcfg.words_per_sentence = 3;
  fx.gcfg.question_len = 3;
  fx.gcfg.answer_len = 2;
  fx.gcfg.vocab_words = 40;
  fx.gcfg.vocab_concepts = 30;
  fx.gcfg.vocab_actions = 10;
  fx.gcfg.cue_words = 8;
  fx.gcfg.cue_concepts = 8;
  fx.mcfg.d = 8;
  fx.mcfg.d_emb = 8;
  fx.record = generate_synthetic(fx.gcfg, seed)[0];
  fx.model = init_model(fx.mcfg, fx.gcfg.vocab(), seed);
  return fx;
}

// Loss of the full network (CE + cross-modal ranking) as a deterministic,
// locally differentiable function of the parameters. Moment selection is
// a hard argmax, so the selected span is pinned to the ground truth and
// the positive/negative sampling stream is fixed. The step is larger than
// the per-op default: coordinates deep in the network carry gradients of
// order 1e-8, where the quotient noise of a 1e-5 step dominates.
inline GradCheckReport full_model_gradcheck(std::uint64_t seed, double eps = 1e-3,
                                            double tol = 1e-4,
                                            std::size_t coords_per_param = 6) {
  ModelFixture fx = make_model_fixture(seed);
  auto f = [&fx](ParamStore&) {
    ForwardOptions opts;
    opts.mode = ForwardMode::train;
    opts.sample_seed = 42;
    opts.forced_span = fx.record.gt_moment;
    return forward_record(fx.model, fx.record, opts).loss;
  };
  return grad_check(f, fx.model.params, eps, tol, coords_per_param, seed);
}

// Per-operation coverage plus the full forward. Every differentiable op in
// the stack appears at least once.
inline std::vector<GradCheckSuiteEntry> run_gradcheck_suite(
    std::uint64_t seed, double eps = 1e-5, double tol = 1e-4) {
  std::vector<GradCheckSuiteEntry> entries;
  auto run = [&](const std::string& name, ParamStore& store,
                 const std::function<Tensor(ParamStore&)>& f,
                 std::size_t coords = 100) {
    GradCheckReport r = grad_check(f, store, eps, tol, coords, seed);
    entries.push_back({name, r.max_rel_err, r.pass()});
  };

  ParamStore store(seed);
  Rng rng(named_seed(seed, "gradcheck-suite"));
  auto add_param = [&](const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return store.create(name, shape, v);
  };
  add_param("a", {4, 4});
  add_param("b", {4, 4});
  add_param("v5", {5});
  add_param("q", {6});

  run("matmul", store, [](ParamStore& p) {
    return sum_all(matmul(p.get("a"), p.get("b")));
  });
  run("transpose", store, [](ParamStore& p) {
    return sum_all(matmul(p.get("a"), transpose(p.get("b"))));
  });
  run("softmax_rows", store, [](ParamStore& p) {
    return sum_all(mul(softmax_rows(p.get("a")), p.get("b")));
  });
  run("relu", store, [](ParamStore& p) { return sum_all(relu(p.get("a"))); });
  run("sigmoid", store, [](ParamStore& p) { return sum_all(sigmoid(p.get("a"))); });
  run("tanh", store, [](ParamStore& p) { return sum_all(tanh_op(p.get("a"))); });
  run("elementwise", store, [](ParamStore& p) {
    Tensor s = sub(p.get("a"), p.get("b"));
    return sum_all(mul(add(s, p.get("a")), s));
  });
  run("scalar_broadcast", store, [](ParamStore& p) {
    return sum_all(mul(p.get("b"), pick(meanpool_time(p.get("a")), 1)));
  });
  run("concat_feature", store, [](ParamStore& p) {
    Tensor c = concat_feature({p.get("a"), p.get("b")});
    return sum_all(mul(c, c));
  });
  run("concat_rows", store, [](ParamStore& p) {
    Tensor c = concat_rows({p.get("a"), p.get("b")});
    return sum_all(mul(c, c));
  });
  run("gather_rows", store, [](ParamStore& p) {
    Tensor g = gather_rows(p.get("a"), {0, 2, 2, 3});
    return sum_all(mul(g, g));
  });
  run("maxpool_time", store, [](ParamStore& p) {
    Tensor y = maxpool_time(p.get("a"));
    return sum_all(mul(y, y));
  });
  run("meanpool_time", store, [](ParamStore& p) {
    Tensor y = meanpool_time(p.get("a"));
    return sum_all(mul(y, y));
  });
  run("stack_pick_reshape", store, [](ParamStore& p) {
    Tensor v = p.get("v5");
    Tensor s = stack_scalars({pick(v, 0), pick(v, 3), pick(v, 1)});
    Tensor row = as_row(s);
    return sum_all(mul(row, row));
  });
  run("cross_entropy", store, [](ParamStore& p) {
    return cross_entropy(p.get("v5"), 2);
  });
  run("dot_attention", store, [](ParamStore& p) {
    Tensor out = dot_attention(p.get("a"), p.get("b"));
    return sum_all(mul(out, out));
  });
  run("self_attend", store, [](ParamStore& p) {
    Tensor out = self_attend(p.get("a"));
    return sum_all(mul(out, out));
  });

  {
    ParamStore enc_store(seed);
    Rng enc_rng(named_seed(seed, "gradcheck-enc"));
    auto birnn = init_birnn(enc_store, "enc", 3, 4, enc_rng);
    std::vector<double> xv(5 * 3);
    for (double& x : xv) x = enc_rng.uniform(-1, 1);
    enc_store.create("x", {5, 3}, xv);
    std::vector<double> tv(7 * 3, 0.0);
    for (std::size_t i = 3; i < tv.size(); ++i) tv[i] = enc_rng.uniform(-1, 1);
    enc_store.create("table", {7, 3}, tv);
    auto run_enc = [&](const std::string& name,
                       const std::function<Tensor(ParamStore&)>& f) {
      GradCheckReport r = grad_check(f, enc_store, eps, tol, 100, seed);
      entries.push_back({name, r.max_rel_err, r.pass()});
    };
    run_enc("embed", [](ParamStore& p) {
      Tensor e = embed({1, 4, 2, 0, 6}, p.get("table"));
      return sum_all(mul(e, e));
    });
    run_enc("birnn_encode", [&birnn](ParamStore& p) {
      Tensor y = birnn_encode(p.get("x"), birnn);
      return sum_all(mul(y, y));
    });
  }

  {
    ParamStore gate_store(seed);
    Rng gate_rng(named_seed(seed, "gradcheck-gate"));
    auto gate = init_mlp(gate_store, "gate", 6, 6, 1, gate_rng);
    std::vector<double> qv(6);
    for (double& x : qv) x = gate_rng.uniform(-1, 1);
    gate_store.create("qf", {6}, qv);
    gate_store.create("mv", {}, {0.62});
    gate_store.create("ms", {}, {0.37});
    for (Modulation mode : {Modulation::additive, Modulation::multiplicative,
                            Modulation::residual}) {
      auto f = [&gate, mode](ParamStore& p) {
        Tensor alpha = mim_alpha(p.get("qf"), gate);
        auto [mv, ms] =
            modulate_moment_scores(p.get("mv"), p.get("ms"), alpha, mode);
        return add(mul(mv, mv), mul(ms, ms));
      };
      GradCheckReport r = grad_check(f, gate_store, eps, tol, 100, seed);
      entries.push_back({std::string("mim_modulate_") + modulation_to_string(mode),
                         r.max_rel_err, r.pass()});
    }
  }

  {
    ParamStore cmr_store(seed);
    cmr_store.create("scores", {8},
                     {0.61, 0.33, 0.57, 0.44, 0.21, 0.83, 0.36, 0.52});
    auto f = [](ParamStore& p) {
      Tensor s = p.get("scores");
      std::vector<ScoredCandidate> cands;
      for (std::size_t i = 0; i < 4; ++i)
        cands.push_back({pick(s, 2 * i), pick(s, 2 * i + 1), i < 2});
      Rng rng(42);
      return *cmr_loss(cands, 0.2, rng);
    };
    GradCheckReport r = grad_check(f, cmr_store, eps, tol, 100, seed);
    entries.push_back({"cmr_loss", r.max_rel_err, r.pass()});
  }

  {
    ParamStore blend_store(seed);
    Rng blend_rng(named_seed(seed, "gradcheck-blend"));
    std::vector<double> lv(5), ls(5);
    for (double& x : lv) x = blend_rng.uniform(-2, 2);
    for (double& x : ls) x = blend_rng.uniform(-2, 2);
    blend_store.create("lv", {5}, lv);
    blend_store.create("ls", {5}, ls);
    blend_store.create("beta_raw", {}, {0.3});
    auto f = [](ParamStore& p) {
      Tensor beta = sigmoid(p.get("beta_raw"));
      return ce_loss(blend_logits(p.get("lv"), p.get("ls"), beta), 1);
    };
    GradCheckReport r = grad_check(f, blend_store, eps, tol, 100, seed);
    entries.push_back({"blend_ce", r.max_rel_err, r.pass()});
  }

  {
    GradCheckReport r = full_model_gradcheck(seed, /*eps=*/1e-3, tol);
    entries.push_back({"full_msan_forward", r.max_rel_err, r.pass()});
  }
  return entries;
}

}  // namespace msan
