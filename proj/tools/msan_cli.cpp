#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "msan/dataset_io.hpp"
#include "msan/generator.hpp"
#include "msan/gradcheck_suite.hpp"
#include "msan/train.hpp"

namespace fs = std::filesystem;

namespace {

msan::Json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) msan::fail("io", "cannot read " + path);
  msan::Json j = msan::Json::parse(f, nullptr, false);
  if (j.is_discarded()) msan::fail("config", "invalid JSON in " + path);
  return j;
}

void write_file(const std::string& path, const std::string& content) {
  if (fs::path(path).has_parent_path())
    fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) msan::fail("io", "cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) msan::fail("io", "failed writing " + path);
}

std::string out_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_gen_data(const CommonArgs& args) {
  msan::GeneratorConfig cfg = args.config.empty()
                                  ? msan::GeneratorConfig{}
                                  : msan::generator_config_from_json(
                                        read_json_file(args.config));
  cfg.validate();
  msan::Dataset ds{cfg.vocab(), msan::generate_synthetic(cfg, args.seed)};
  msan::save_dataset(ds, args.out);
  std::printf("wrote %zu records to %s\n", ds.records.size(), args.out.c_str());
  return 0;
}

msan::TrainConfig load_train_config(const CommonArgs& args) {
  msan::TrainConfig cfg = args.config.empty()
                              ? msan::TrainConfig{}
                              : msan::train_config_from_json(
                                    read_json_file(args.config));
  if (args.seed_given) cfg.seed = args.seed;
  return cfg;
}

void write_eval_outputs(const std::string& dir, const msan::EvalResult& ev) {
  write_file(out_path(dir, "report.json"),
             msan::eval_report_to_json(ev.report).dump(2) + "\n");
  write_file(out_path(dir, "report.csv"), msan::eval_report_to_csv(ev.report));
  write_file(out_path(dir, "traces.jsonl"), msan::traces_to_jsonl(ev.traces));
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& valid_path) {
  msan::TrainConfig cfg = load_train_config(args);
  msan::Dataset train_set = msan::load_dataset(data_path);
  msan::Dataset valid_set = msan::load_dataset(valid_path);
  msan::TrainResult result =
      msan::train(cfg, train_set.records, valid_set.records, train_set.vocab);
  msan::save_checkpoint(result.model, out_path(args.out, "checkpoint.bin"));
  write_file(out_path(args.out, "train_log.jsonl"), result.log_jsonl);
  msan::EvalResult ev = msan::evaluate(result.model, valid_set.records);
  write_eval_outputs(args.out, ev);
  std::printf("best_val_accuracy %s at epoch %zu (stopped after %zu)\n",
              msan::num(result.best_val_accuracy).c_str(), result.best_epoch,
              result.stopped_epoch);
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& data_path) {
  msan::MsanModel model = msan::load_checkpoint(checkpoint_path);
  if (!args.config.empty()) {
    msan::TrainConfig cfg = msan::train_config_from_json(read_json_file(args.config));
    msan::ensure_checkpoint_compatible(model, cfg.model);
  }
  msan::Dataset ds = msan::load_dataset(data_path);
  msan::EvalResult ev = msan::evaluate(model, ds.records);
  write_eval_outputs(args.out, ev);
  std::printf("accuracy %s on %zu records\n", msan::num(ev.report.accuracy()).c_str(),
              ev.report.count);
  return 0;
}

int cmd_localize(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& data_path) {
  msan::MsanModel model = msan::load_checkpoint(checkpoint_path);
  msan::Dataset ds = msan::load_dataset(data_path);
  msan::EvalResult ev = msan::evaluate(model, ds.records);
  msan::Json report = msan::localization_report_to_json(model, ev.traces);
  write_file(out_path(args.out, "localization.json"), report.dump(2) + "\n");
  write_file(out_path(args.out, "localization.csv"),
             msan::localization_report_to_csv(ev.traces));
  std::printf("mean_iou %s mean_cov %s\n", msan::num(ev.report.mean_iou()).c_str(),
              msan::num(ev.report.mean_cov()).c_str());
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_path,
               const std::string& valid_path, const std::string& variant_list) {
  msan::TrainConfig cfg = load_train_config(args);
  std::vector<std::string> variants;
  std::string item;
  std::istringstream in(variant_list);
  while (std::getline(in, item, ','))
    if (!item.empty()) variants.push_back(item);
  if (variants.empty()) msan::fail("config", "no ablation variants given");
  for (const auto& v : variants) msan::ablation_variant_config(cfg.model, v);

  msan::Dataset train_set = msan::load_dataset(data_path);
  msan::Dataset valid_set = msan::load_dataset(valid_path);
  auto rows = msan::ablate(cfg, train_set.records, valid_set.records,
                           train_set.vocab, variants);
  write_file(out_path(args.out, "ablation.csv"), msan::ablation_to_csv(rows));
  write_file(out_path(args.out, "ablation.json"),
             msan::ablation_to_json(rows).dump(2) + "\n");
  std::printf("%s", msan::ablation_to_csv(rows).c_str());
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  auto entries = msan::run_gradcheck_suite(args.seed);
  bool all_pass = true;
  for (const auto& e : entries) {
    std::printf("gradcheck %-24s max_rel_err %.3e %s\n", e.name.c_str(),
                e.max_rel_err, e.passed ? "PASS" : "FAIL");
    all_pass &= e.passed;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MSAN: two-stage multimodal question answering on synthetic clips"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_path, valid_path, checkpoint_path, variant_list;

  auto add_common = [&args](CLI::App* cmd, bool need_out) {
    cmd->add_option("--config", args.config, "JSON config file");
    auto* seed = cmd->add_option("--seed", args.seed, "root RNG seed");
    seed->each([&args](const std::string&) { args.seed_given = true; });
    auto* out = cmd->add_option("--out", args.out, "output path");
    if (need_out) out->required();
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, true);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  train->add_option("--data", data_path, "training dataset (jsonl)")->required();
  train->add_option("--valid", valid_path, "validation dataset (jsonl)")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset (jsonl)")->required();

  auto* loc = app.add_subcommand("localize", "report localized moments");
  add_common(loc, true);
  loc->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  loc->add_option("--data", data_path, "dataset (jsonl)")->required();

  auto* abl = app.add_subcommand("ablate", "train and compare model variants");
  add_common(abl, true);
  abl->add_option("--data", data_path, "training dataset (jsonl)")->required();
  abl->add_option("--valid", valid_path, "validation dataset (jsonl)")->required();
  abl->add_option("--variants", variant_list,
                  "comma-separated variant names")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gc, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (train->parsed()) return cmd_train(args, data_path, valid_path);
    if (eval->parsed()) return cmd_eval(args, checkpoint_path, data_path);
    if (loc->parsed()) return cmd_localize(args, checkpoint_path, data_path);
    if (abl->parsed()) return cmd_ablate(args, data_path, valid_path, variant_list);
    if (gc->parsed()) return cmd_gradcheck(args);
  } catch (const msan::Error& e) {
    std::cerr << "error:" << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
