#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msan/dataset_io.hpp"
#include "msan/model.hpp"

namespace msan {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 0.0003;
  std::size_t max_epochs = 10;
  std::size_t early_stop_patience = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  MsanConfig model;

  void validate() const {
    if (batch_size == 0) fail("config", "batch_size must be positive");
    if (learning_rate < 0.0) fail("config", "learning_rate must be non-negative");
    if (max_epochs == 0) fail("config", "max_epochs must be positive");
    if (early_stop_patience == 0) fail("config", "early_stop_patience must be positive");
    model.validate();
  }
};

// ---------------------------------------------------------------------------
// config <-> JSON
// ---------------------------------------------------------------------------
inline Json msan_config_to_json(const MsanConfig& c) {
  Json j;
  j["d"] = c.d;
  j["d_emb"] = c.d_emb;
  j["modulation"] = modulation_to_string(c.modulation);
  j["margin"] = c.margin;
  j["stride_fraction"] = c.stride_fraction;
  j["expand_fraction"] = c.expand_fraction;
  j["expand_at_train"] = c.expand_at_train;
  j["cmr_weight"] = c.cmr_weight;
  j["window_fracs"] = c.window_fracs;
  j["head_mode"] =
      c.head_mode == HeadMode::fc5 ? "fc5" : "scalar";
  j["use_mpn"] = c.use_mpn;
  j["use_gt_moment"] = c.use_gt_moment;
  j["use_sa"] = c.use_sa;
  j["use_c2c"] = c.use_c2c;
  j["mim_on_mpn"] = c.mim_on_mpn;
  j["mim_on_hrn"] = c.mim_on_hrn;
  j["use_action_concepts"] = c.use_action_concepts;
  return j;
}

inline MsanConfig msan_config_from_json(const Json& j) {
  if (!j.is_object()) fail("config", "model config must be a JSON object");
  MsanConfig c;
  if (j.contains("d")) c.d = j["d"].get<std::size_t>();
  if (j.contains("d_emb")) c.d_emb = j["d_emb"].get<std::size_t>();
  if (j.contains("modulation"))
    c.modulation = modulation_from_string(j["modulation"].get<std::string>());
  if (j.contains("margin")) c.margin = j["margin"].get<double>();
  if (j.contains("stride_fraction"))
    c.stride_fraction = j["stride_fraction"].get<double>();
  if (j.contains("expand_fraction"))
    c.expand_fraction = j["expand_fraction"].get<double>();
  if (j.contains("cmr_weight")) c.cmr_weight = j["cmr_weight"].get<double>();
  if (j.contains("window_fracs"))
    c.window_fracs = j["window_fracs"].get<std::vector<double>>();
  if (j.contains("head_mode"))
    c.head_mode = head_mode_from_string(j["head_mode"].get<std::string>());
  auto get_bool = [&j](const char* key, bool dflt) {
    return j.contains(key) ? j[key].get<bool>() : dflt;
  };
  c.expand_at_train = get_bool("expand_at_train", c.expand_at_train);
  c.use_mpn = get_bool("use_mpn", c.use_mpn);
  c.use_gt_moment = get_bool("use_gt_moment", c.use_gt_moment);
  c.use_sa = get_bool("use_sa", c.use_sa);
  c.use_c2c = get_bool("use_c2c", c.use_c2c);
  c.mim_on_mpn = get_bool("mim_on_mpn", c.mim_on_mpn);
  c.mim_on_hrn = get_bool("mim_on_hrn", c.mim_on_hrn);
  c.use_action_concepts = get_bool("use_action_concepts", c.use_action_concepts);
  c.validate();
  return c;
}

inline Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["max_epochs"] = c.max_epochs;
  j["early_stop_patience"] = c.early_stop_patience;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["seed"] = c.seed;
  j["model"] = msan_config_to_json(c.model);
  return j;
}

inline TrainConfig train_config_from_json(const Json& j) {
  if (!j.is_object()) fail("config", "train config must be a JSON object");
  TrainConfig c;
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("learning_rate"))
    c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<std::size_t>();
  if (j.contains("early_stop_patience"))
    c.early_stop_patience = j["early_stop_patience"].get<std::size_t>();
  if (j.contains("adam_beta1")) c.adam_beta1 = j["adam_beta1"].get<double>();
  if (j.contains("adam_beta2")) c.adam_beta2 = j["adam_beta2"].get<double>();
  if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("model")) c.model = msan_config_from_json(j["model"]);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// checkpoints carry the model config and vocab as metadata
// ---------------------------------------------------------------------------
inline void save_checkpoint(const MsanModel& model, const std::string& path) {
  Json meta;
  meta["model"] = msan_config_to_json(model.cfg);
  meta["vocab"] = {{"words", model.vocab.words},
                   {"concepts", model.vocab.concepts},
                   {"actions", model.vocab.actions}};
  ParamStore store = model.params.clone();
  store.set_metadata(meta.dump());
  store.save(path);
}

inline MsanModel load_checkpoint(const std::string& path) {
  ParamStore store = ParamStore::load(path);
  Json meta = Json::parse(store.metadata(), nullptr, false);
  if (meta.is_discarded() || !meta.contains("model") || !meta.contains("vocab"))
    fail("validation", "checkpoint has no model metadata: " + path);
  MsanConfig cfg = msan_config_from_json(meta["model"]);
  Vocab vocab;
  vocab.words = meta["vocab"].value("words", std::size_t{0});
  vocab.concepts = meta["vocab"].value("concepts", std::size_t{0});
  vocab.actions = meta["vocab"].value("actions", std::size_t{0});
  return bind_model(cfg, vocab, std::move(store));
}

// a checkpoint may only be evaluated under a config with matching widths
inline void ensure_checkpoint_compatible(const MsanModel& model,
                                         const MsanConfig& cfg) {
  if (cfg.d != model.cfg.d || cfg.d_emb != model.cfg.d_emb) {
    fail("compatibility",
         "checkpoint built with d=" + std::to_string(model.cfg.d) + ", d_emb=" +
             std::to_string(model.cfg.d_emb) + " but config asks for d=" +
             std::to_string(cfg.d) + ", d_emb=" + std::to_string(cfg.d_emb));
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, tensor] : params.all()) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != tensor.size()) {
        m.assign(tensor.size(), 0.0);
        v.assign(tensor.size(), 0.0);
      }
      auto& values = tensor.node()->values;
      const auto& grad = tensor.node()->grad;
      if (grad.empty()) continue;
      for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------
struct GroupStats {
  std::size_t count = 0;
  std::size_t correct = 0;
  double alpha_sum = 0.0;
  std::size_t alpha_count = 0;
  double beta_sum = 0.0;
  std::size_t beta_count = 0;

  double accuracy() const {
    return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
  }
};

struct EvalReport {
  std::size_t count = 0;
  std::size_t correct = 0;
  double iou_sum = 0.0;
  double cov_sum = 0.0;
  std::map<std::string, GroupStats> by_question_type;
  std::map<std::string, GroupStats> by_modality_label;

  double accuracy() const {
    return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
  }
  double mean_iou() const { return count == 0 ? 0.0 : iou_sum / static_cast<double>(count); }
  double mean_cov() const { return count == 0 ? 0.0 : cov_sum / static_cast<double>(count); }
};

struct EvalResult {
  EvalReport report;
  std::vector<RecordTrace> traces;
};

inline EvalResult evaluate(const MsanModel& model,
                           const std::vector<ClipRecord>& records) {
  EvalResult out;
  ForwardOptions opts;
  opts.mode = ForwardMode::eval;
  for (const auto& rec : records) {
    ForwardResult r = forward_record(model, rec, opts);
    release_graph(r.loss);
    const RecordTrace& t = r.trace;
    out.report.count += 1;
    out.report.correct += t.correct ? 1 : 0;
    out.report.iou_sum += t.iou;
    out.report.cov_sum += t.cov;
    auto update = [&t](GroupStats& g) {
      g.count += 1;
      g.correct += t.correct ? 1 : 0;
      if (!std::isnan(t.alpha)) {
        g.alpha_sum += t.alpha;
        g.alpha_count += 1;
      }
      if (!std::isnan(t.beta)) {
        g.beta_sum += t.beta;
        g.beta_count += 1;
      }
    };
    update(out.report.by_question_type[question_type_tag(t.question_type)]);
    update(out.report.by_modality_label[modality_label_str(t.label)]);
    out.traces.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// report emission: JSON and CSV side by side. Doubles go through the JSON
// dumper in both so the two stay byte-deterministic.
// ---------------------------------------------------------------------------
inline std::string num(double v) {
  if (std::isnan(v)) return "null";
  return Json(v).dump();
}

inline Json eval_report_to_json(const EvalReport& r) {
  Json j;
  j["count"] = r.count;
  j["overall_accuracy"] = r.accuracy();
  j["mpn"] = {{"mean_iou", r.mean_iou()}, {"mean_cov", r.mean_cov()}};
  Json qt = Json::object();
  for (const auto& [tag, g] : r.by_question_type)
    qt[tag] = {{"count", g.count}, {"accuracy", g.accuracy()}};
  j["by_question_type"] = qt;
  Json lbl = Json::object();
  for (const auto& [tag, g] : r.by_modality_label) {
    Json e = {{"count", g.count}, {"accuracy", g.accuracy()}};
    e["mean_alpha"] = g.alpha_count
                          ? Json(g.alpha_sum / static_cast<double>(g.alpha_count))
                          : Json();
    e["mean_beta"] = g.beta_count
                         ? Json(g.beta_sum / static_cast<double>(g.beta_count))
                         : Json();
    lbl[tag] = e;
  }
  j["by_modality_label"] = lbl;
  return j;
}

inline std::string eval_report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric,group,value\n";
  os << "count,overall," << r.count << "\n";
  os << "accuracy,overall," << num(r.accuracy()) << "\n";
  os << "mean_iou,mpn," << num(r.mean_iou()) << "\n";
  os << "mean_cov,mpn," << num(r.mean_cov()) << "\n";
  for (const auto& [tag, g] : r.by_question_type) {
    os << "count,qtype:" << tag << "," << g.count << "\n";
    os << "accuracy,qtype:" << tag << "," << num(g.accuracy()) << "\n";
  }
  for (const auto& [tag, g] : r.by_modality_label) {
    os << "count,label:" << tag << "," << g.count << "\n";
    os << "accuracy,label:" << tag << "," << num(g.accuracy()) << "\n";
    os << "mean_alpha,label:" << tag << ","
       << (g.alpha_count ? num(g.alpha_sum / static_cast<double>(g.alpha_count))
                         : "null")
       << "\n";
    os << "mean_beta,label:" << tag << ","
       << (g.beta_count ? num(g.beta_sum / static_cast<double>(g.beta_count))
                        : "null")
       << "\n";
  }
  return os.str();
}

inline Json trace_to_json(const RecordTrace& t, std::size_t index) {
  Json j;
  j["index"] = index;
  j["alpha"] = std::isnan(t.alpha) ? Json() : Json(t.alpha);
  j["beta"] = std::isnan(t.beta) ? Json() : Json(t.beta);
  j["span"] = {t.predicted_span.begin, t.predicted_span.end};
  j["iou"] = t.iou;
  j["cov"] = t.cov;
  j["logits_v"] = t.logits_v;
  j["logits_s"] = t.logits_s;
  j["logits"] = t.logits;
  j["predicted"] = t.predicted;
  j["correct"] = t.correct;
  j["modality_label"] = modality_label_str(t.label);
  j["question_type"] = question_type_tag(t.question_type);
  return j;
}

inline std::string traces_to_jsonl(const std::vector<RecordTrace>& traces) {
  std::ostringstream os;
  for (std::size_t i = 0; i < traces.size(); ++i)
    os << trace_to_json(traces[i], i).dump() << "\n";
  return os.str();
}

// per-record localization report with aggregate means
inline Json localization_report_to_json(const MsanModel& model,
                                        const std::vector<RecordTrace>& traces) {
  Json j;
  j["modulation"] = modulation_to_string(model.cfg.modulation);
  j["expand_fraction"] = model.cfg.expand_fraction;
  double iou = 0.0, cov = 0.0;
  Json rows = Json::array();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    iou += t.iou;
    cov += t.cov;
    Json row;
    row["index"] = i;
    row["span"] = {t.predicted_span.begin, t.predicted_span.end};
    row["iou"] = t.iou;
    row["cov"] = t.cov;
    row["alpha"] = std::isnan(t.alpha) ? Json() : Json(t.alpha);
    rows.push_back(row);
  }
  const double n = traces.empty() ? 1.0 : static_cast<double>(traces.size());
  j["mean_iou"] = iou / n;
  j["mean_cov"] = cov / n;
  j["records"] = rows;
  return j;
}

inline std::string localization_report_to_csv(
    const std::vector<RecordTrace>& traces) {
  std::ostringstream os;
  os << "index,begin,end,iou,cov,alpha\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    os << i << "," << num(t.predicted_span.begin) << ","
       << num(t.predicted_span.end) << "," << num(t.iou) << "," << num(t.cov)
       << "," << num(t.alpha) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// training loop: batched grad accumulation, per-epoch validation accuracy,
// early stopping on patience, best checkpoint kept
// ---------------------------------------------------------------------------
struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool improved = false;
};

struct TrainResult {
  MsanModel model;  // holds the best parameters after training
  std::vector<EpochLog> epochs;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  std::string log_jsonl;
};

inline TrainResult train(const TrainConfig& cfg,
                         const std::vector<ClipRecord>& train_records,
                         const std::vector<ClipRecord>& valid_records,
                         const Vocab& vocab) {
  cfg.validate();
  if (train_records.empty()) fail("contract", "empty training set");
  if (valid_records.empty()) fail("contract", "empty validation set");

  TrainResult out;
  out.model = init_model(cfg.model, vocab, cfg.seed);
  AdamOptimizer adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_eps);
  ParamStore best = out.model.params.clone();
  std::size_t stale_epochs = 0;
  std::ostringstream log;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(named_seed(cfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t batch_end = std::min(order.size(), pos + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - pos);
      out.model.params.zero_grads();
      for (std::size_t b = pos; b < batch_end; ++b) {
        const std::size_t idx = order[b];
        ForwardOptions opts;
        opts.mode = ForwardMode::train;
        opts.sample_seed = named_seed(cfg.seed, "sample",
                                      epoch * 0x10000000ull + idx);
        ForwardResult r = forward_record(out.model, train_records[idx], opts);
        const double value = r.loss.item();
        if (!std::isfinite(value))
          fail("divergence", "non-finite loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + " record " +
                                 std::to_string(idx));
        loss_sum += value;
        Tensor scaled = scale(r.loss, inv_batch);
        backward(scaled);
        release_graph(scaled);
      }
      adam.step(out.model.params);
      ++step;
    }

    EpochLog el;
    el.epoch = epoch;
    el.train_loss = loss_sum / static_cast<double>(train_records.size());
    el.val_accuracy = evaluate(out.model, valid_records).report.accuracy();
    el.improved = el.val_accuracy > out.best_val_accuracy || out.best_epoch == 0;
    if (el.improved) {
      out.best_val_accuracy = el.val_accuracy;
      out.best_epoch = epoch;
      best.copy_values_from(out.model.params);
      stale_epochs = 0;
    } else {
      ++stale_epochs;
    }
    out.epochs.push_back(el);
    Json jlog;
    jlog["epoch"] = epoch;
    jlog["train_loss"] = el.train_loss;
    jlog["val_accuracy"] = el.val_accuracy;
    jlog["improved"] = el.improved;
    log << jlog.dump() << "\n";
    out.stopped_epoch = epoch;
    if (stale_epochs >= cfg.early_stop_patience) break;
  }

  out.model.params.copy_values_from(best);
  Json tail;
  tail["stopped_epoch"] = out.stopped_epoch;
  tail["best_epoch"] = out.best_epoch;
  tail["best_val_accuracy"] = out.best_val_accuracy;
  log << tail.dump() << "\n";
  out.log_jsonl = log.str();
  return out;
}

// ---------------------------------------------------------------------------
// ablations: one train+eval per variant, shared seed
// ---------------------------------------------------------------------------
inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names = {
      "full",           "no-mpn",        "gt-moment",
      "no-sa",          "no-c2c",        "no-mim-on-mpn",
      "no-mim-on-hrn",  "additive",      "multiplicative",
      "residual",       "no-action-concepts"};
  return names;
}

inline MsanConfig ablation_variant_config(const MsanConfig& base,
                                          const std::string& name) {
  MsanConfig c = base;
  if (name == "full") return c;
  if (name == "no-mpn") {
    c.use_mpn = false;
    return c;
  }
  if (name == "gt-moment") {
    c.use_gt_moment = true;
    return c;
  }
  if (name == "no-sa") {
    c.use_sa = false;
    return c;
  }
  if (name == "no-c2c") {
    c.use_c2c = false;
    return c;
  }
  if (name == "no-mim-on-mpn") {
    c.mim_on_mpn = false;
    return c;
  }
  if (name == "no-mim-on-hrn") {
    c.mim_on_hrn = false;
    return c;
  }
  if (name == "additive" || name == "multiplicative" || name == "residual") {
    c.modulation = modulation_from_string(name);
    return c;
  }
  if (name == "no-action-concepts") {
    c.use_action_concepts = false;
    return c;
  }
  std::string valid;
  for (const auto& n : ablation_variant_names()) valid += n + " ";
  fail("config", "unknown ablation variant '" + name + "'; valid: " + valid);
}

struct AblationRow {
  std::string variant;
  double accuracy = 0.0;
  double mean_iou = 0.0;
  double mean_cov = 0.0;
  std::size_t best_epoch = 0;
};

inline std::vector<AblationRow> ablate(const TrainConfig& base,
                                       const std::vector<ClipRecord>& train_records,
                                       const std::vector<ClipRecord>& valid_records,
                                       const Vocab& vocab,
                                       const std::vector<std::string>& variants) {
  std::vector<AblationRow> rows;
  for (const auto& name : variants) {
    TrainConfig cfg = base;
    cfg.model = ablation_variant_config(base.model, name);
    TrainResult tr = train(cfg, train_records, valid_records, vocab);
    EvalResult ev = evaluate(tr.model, valid_records);
    AblationRow row;
    row.variant = name;
    row.accuracy = ev.report.accuracy();
    row.mean_iou = ev.report.mean_iou();
    row.mean_cov = ev.report.mean_cov();
    row.best_epoch = tr.best_epoch;
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,accuracy,mean_iou,mean_cov,best_epoch\n";
  for (const auto& r : rows)
    os << r.variant << "," << num(r.accuracy) << "," << num(r.mean_iou) << ","
       << num(r.mean_cov) << "," << r.best_epoch << "\n";
  return os.str();
}

inline Json ablation_to_json(const std::vector<AblationRow>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    Json j;
    j["variant"] = r.variant;
    j["accuracy"] = r.accuracy;
    j["mean_iou"] = r.mean_iou;
    j["mean_cov"] = r.mean_cov;
    j["best_epoch"] = r.best_epoch;
    arr.push_back(j);
  }
  return arr;
}

}  // namespace msan
