// auglab: experiment runner for learned instance-specific augmentations.
// Subcommands: gen-data, train, eval, decompose.
// Exit codes: 0 success, 2 usage/config error, 3 runtime divergence, 4 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "auglab/config.hpp"
#include "auglab/data.hpp"
#include "auglab/experiment.hpp"

namespace fs = std::filesystem;
using namespace auglab;
using nlohmann::json;

namespace {

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out);
}

json metrics_to_json(const MetricsRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["train_acc"] = r.train_acc;
  j["test_acc"] = r.test_acc;
  if (r.tta_acc.has_value())
    j["tta_acc"] = *r.tta_acc;
  else
    j["tta_acc"] = nullptr;
  if (r.mean_entropy.has_value())
    j["mean_entropy"] = *r.mean_entropy;
  else
    j["mean_entropy"] = nullptr;
  j["lambda"] = r.lambda;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::string data_train;
  std::string data_test;
  long long seed = -1;  // -1: keep config/file value

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file (key = value lines)");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "RNG seed (overrides the config)");
    cmd->add_option("--data-train", data_train, "training dataset file (data.train)");
    cmd->add_option("--data-test", data_test, "test dataset file (data.test)");
  }

  KeyValueConfig load() const {
    KeyValueConfig cfg;
    if (!config_path.empty()) cfg = KeyValueConfig::from_file(config_path);
    if (seed >= 0) cfg.set("seed", std::to_string(seed));
    if (!out.empty()) cfg.set("out", out);
    if (!data_train.empty()) cfg.set("data.train", data_train);
    if (!data_test.empty()) cfg.set("data.test", data_test);
    return cfg;
  }
};

void echo_config(const KeyValueConfig& cfg, const std::string& out_dir) {
  std::ofstream out(out_dir + "/config.effective");
  if (!out) throw IoError("cannot write effective config in " + out_dir);
  cfg.echo(out);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& common, const std::string& task_flag, long long n_train,
                 long long n_test, double label_noise, const std::string& conditions_flag,
                 long long n_per_condition, long long n_test_per_condition) {
  KeyValueConfig cfg = common.load();
  cfg.check_known(known_config_keys());
  const std::string task_name_str = task_flag.empty() ? cfg.get_string("task", "") : task_flag;
  if (task_name_str.empty()) throw ConfigError("gen-data: --task is required");
  const Task task = parse_task(task_name_str);
  const std::string out = cfg.get_string("out", "");
  if (out.empty()) throw ConfigError("gen-data: --out is required");
  ensure_out_dir(out);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

  if (n_train <= 0) n_train = cfg.get_int("gen.n_train", 2000);
  if (n_test <= 0) n_test = cfg.get_int("gen.n_test", 500);
  if (label_noise < 0) label_noise = cfg.get_double("gen.label_noise", 0.0);

  Dataset train, test;
  if (task == Task::kGlyphs) {
    GlyphTask t = gen_glyphs(seed, n_train, n_test, label_noise);
    train = t.train;
    test = t.test;
  } else if (task == Task::kTextures) {
    const std::string cond_csv =
        conditions_flag.empty() ? cfg.get_string("gen.conditions", "0") : conditions_flag;
    if (n_per_condition <= 0) n_per_condition = cfg.get_int("gen.n_per_condition", 512);
    if (n_test_per_condition <= 0)
      n_test_per_condition = cfg.get_int("gen.n_test_per_condition", 64);
    TextureTask t = gen_textures(seed, parse_condition_list(cond_csv), n_per_condition,
                                 n_test_per_condition);
    train = t.train;
    test = t.test;
  } else {
    CompositeTask t = gen_composites(seed, n_train, n_test);
    train = t.train;
    test = t.test;
  }
  const std::string train_path = out + "/train.tn";
  const std::string test_path = out + "/test.tn";
  write_dataset(train_path, train);
  write_dataset(test_path, test);
  echo_config(cfg, out);

  json manifest;
  manifest["task"] = task_name_str;
  manifest["train"] = {{"path", train_path},
                       {"examples", train.size()},
                       {"bytes", static_cast<long long>(fs::file_size(train_path))}};
  manifest["test"] = {{"path", test_path},
                      {"examples", test.size()},
                      {"bytes", static_cast<long long>(fs::file_size(test_path))}};
  std::cout << manifest.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonFlags& common, const std::string& mode_flag,
              const std::string& task_flag, long long epochs_flag) {
  KeyValueConfig cfg = common.load();
  if (!mode_flag.empty()) cfg.set("mode", mode_flag);
  if (!task_flag.empty()) cfg.set("task", task_flag);
  if (epochs_flag > 0) cfg.set("train.epochs", std::to_string(epochs_flag));
  RunOptions opt = options_from_config(cfg);

  const std::string out = cfg.get_string("out", "");
  if (out.empty()) throw ConfigError("train: --out is required");
  const std::string train_path = cfg.get_string("data.train", "");
  const std::string test_path = cfg.get_string("data.test", "");
  if (train_path.empty() || test_path.empty())
    throw ConfigError("train: data.train and data.test must name dataset files");
  ensure_out_dir(out);
  echo_config(cfg, out);

  Dataset train = read_dataset(train_path);
  Dataset test = read_dataset(test_path);
  const TaskShape shape = task_shape(opt.task);
  if (train.images.shape()[1] != shape.channels || train.images.shape()[2] != shape.image_side)
    throw ConfigError("train: dataset does not match task '" + task_name(opt.task) + "'");

  std::ofstream metrics(out + "/metrics.jsonl");
  if (!metrics) throw IoError("cannot write metrics in " + out);
  auto s = make_session(opt);
  auto on_epoch = [&](const MetricsRecord& r) {
    metrics << metrics_to_json(r).dump() << "\n";
    metrics.flush();
  };
  if (opt.mode == Mode::kContrastive)
    run_contrastive(*s, train, test, on_epoch);
  else
    run_supervised(*s, train, test, on_epoch);
  save_session(*s, out + "/checkpoint.tn");
  std::cout << json{{"checkpoint", out + "/checkpoint.tn"},
                    {"metrics", out + "/metrics.jsonl"},
                    {"epochs", s->epoch}}
                   .dump()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonFlags& common, const std::string& checkpoint, int tta_samples,
             long long dump_limit) {
  KeyValueConfig cfg = common.load();
  RunOptions opt = options_from_config(cfg);
  if (tta_samples < 1) throw ConfigError("eval: --tta-samples must be at least 1");
  if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  const std::string test_path = cfg.get_string("data.test", "");
  if (test_path.empty()) throw ConfigError("eval: data.test must name a dataset file");
  const std::string out = cfg.get_string("out", "");
  if (out.empty()) throw ConfigError("eval: --out is required");
  ensure_out_dir(out);

  auto s = make_session(opt);
  load_session(*s, checkpoint);
  Dataset test = read_dataset(test_path);

  // The plain column is single-sample TTA; per-example streams are shared
  // with the requested-count column, so --tta-samples 1 reproduces it bit
  // for bit. The noaug column feeds each untransformed input once.
  RngStream eval_stream = RngStream(opt.seed).split(0xE0A1);
  const double plain_acc =
      evaluate_tta_accuracy(s->classifier, *s->aug, test, 1, eval_stream);
  RngStream eval_stream2 = RngStream(opt.seed).split(0xE0A1);
  const double tta_acc =
      evaluate_tta_accuracy(s->classifier, *s->aug, test, tta_samples, eval_stream2);
  const double noaug_acc = evaluate_accuracy(s->classifier, *s->aug, test);

  json report;
  report["plain_acc"] = plain_acc;
  report["tta_acc"] = tta_acc;
  report["noaug_acc"] = noaug_acc;
  report["tta_samples"] = tta_samples;

  if (opt.task == Task::kGlyphs && s->head) {
    auto* aug = dynamic_cast<UniformAugmenter*>(s->aug.get());
    std::ofstream dump(out + "/intervals.csv");
    if (!dump) throw IoError("cannot write interval dump in " + out);
    dump << "example_id,theta0,learned_min,learned_max,true_min,true_max\n";
    NoGradGuard ng;
    for (long long i = 0; i < test.size(); ++i) {
      DecodedIntervals dec = aug->intervals(test.stack({i}));
      const double theta0 = test.latents.at("theta0").value()[i];
      auto [true_lo, true_hi] = glyph_true_interval(theta0);
      dump << i << "," << theta0 << "," << dec.lo.value()[0] << "," << dec.hi.value()[0] << ","
           << true_lo << "," << true_hi << "\n";
    }
    report["intervals"] = out + "/intervals.csv";
  }
  if (uses_crop(opt) && (s->lrp || s->global_logits)) {
    auto* aug = dynamic_cast<CropAugmenter*>(s->aug.get());
    {
      std::ofstream table_dump(out + "/patch_table.csv");
      if (!table_dump) throw IoError("cannot write patch table in " + out);
      export_patch_table(aug->table(), table_dump);
    }
    std::ofstream dump(out + "/patches.csv");
    if (!dump) throw IoError("cannot write patch probabilities in " + out);
    dump << "example_id,patch_index,layer,center_y,center_x,side,prob\n";
    const long long limit = dump_limit > 0 ? std::min(dump_limit, test.size()) : test.size();
    for (long long i = 0; i < limit; ++i) {
      auto probs = aug->patch_probs(test.example(i));
      for (std::size_t p = 0; p < probs.size(); ++p) {
        const PatchSpec& e = aug->table().entries[p];
        dump << i << "," << p << "," << e.layer << "," << e.center_y << "," << e.center_x << ","
             << e.side << "," << probs[p] << "\n";
      }
    }
    report["patches"] = out + "/patches.csv";
    report["patch_table"] = out + "/patch_table.csv";
  }

  std::ofstream report_file(out + "/eval.json");
  report_file << report.dump(2) << "\n";
  std::cout << report.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

int cmd_decompose(const CommonFlags& common, const std::string& checkpoint, long long samples) {
  KeyValueConfig cfg = common.load();
  RunOptions opt = options_from_config(cfg);
  if (opt.task != Task::kGlyphs)
    throw ConfigError("decompose: only the glyph task exposes an exact label law");
  const std::string train_path = cfg.get_string("data.train", "");
  if (train_path.empty()) throw ConfigError("decompose: data.train must name a dataset file");

  GlyphTask task;
  task.train = read_dataset(train_path);
  task.label_noise = cfg.get_double("gen.label_noise", 0.0);
  if (!task.train.latents.count("theta0") || !task.train.latents.count("glyph"))
    throw ConfigError("decompose: dataset lacks glyph latents");

  auto s = make_session(opt);
  if (!checkpoint.empty()) load_session(*s, checkpoint);

  auto rep = decompose_generalization(*s, task, samples,
                                      RngStream(opt.seed).split(0xDEC0));
  json j;
  j["term_a"] = rep.term_a;
  j["term_b"] = rep.term_b;
  j["term_c"] = rep.term_c;
  j["rhat"] = rep.rhat;
  j["r"] = rep.r;
  j["term_b_direct"] = rep.term_b_direct;
  j["term_b_combined_se"] = rep.term_b_combined_se;
  j["term_a_se"] = rep.term_a_se;
  j["identity_residual"] = rep.identity_residual;
  j["samples"] = rep.samples;
  std::cout << j.dump() << "\n";

  const std::string out = cfg.get_string("out", "");
  if (!out.empty()) {
    ensure_out_dir(out);
    std::ofstream f(out + "/decomposition.json");
    f << j.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auglab: learned instance-specific augmentation experiments"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, dec_flags;

  auto* gen = app.add_subcommand("gen-data", "generate a dataset");
  gen_flags.attach(gen);
  std::string gen_task;
  long long n_train = 0, n_test = 0, n_per_cond = 0, n_test_per_cond = 0;
  double label_noise = -1.0;
  std::string conditions;
  gen->add_option("--task", gen_task, "glyphs|textures|composites");
  gen->add_option("--n-train", n_train, "training examples");
  gen->add_option("--n-test", n_test, "test examples");
  gen->add_option("--label-noise", label_noise, "glyph label flip probability");
  gen->add_option("--conditions", conditions, "texture lighting condition ids, comma separated");
  gen->add_option("--n-per-condition", n_per_cond, "texture train examples per condition");
  gen->add_option("--n-test-per-condition", n_test_per_cond,
                  "texture test examples per condition");

  auto* train = app.add_subcommand("train", "train a model");
  train_flags.attach(train);
  std::string train_mode, train_task;
  long long train_epochs = 0;
  train->add_option("--mode", train_mode, "training mode");
  train->add_option("--task", train_task, "task");
  train->add_option("--epochs", train_epochs, "epoch count");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(eval);
  std::string eval_ckpt;
  int tta_samples = 10;
  long long dump_limit = 32;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval->add_option("--tta-samples", tta_samples, "augmentation samples per prediction");
  eval->add_option("--dump-limit", dump_limit, "examples in the patch-probability dump");

  auto* dec = app.add_subcommand("decompose", "generalization-error decomposition");
  dec_flags.attach(dec);
  std::string dec_ckpt;
  long long samples = 20000;
  dec->add_option("--checkpoint", dec_ckpt, "checkpoint file (optional: fresh nets otherwise)");
  dec->add_option("--samples", samples, "Monte-Carlo draws per term");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_flags, gen_task, n_train, n_test, label_noise, conditions,
                          n_per_cond, n_test_per_cond);
    if (train->parsed()) return cmd_train(train_flags, train_mode, train_task, train_epochs);
    if (eval->parsed()) return cmd_eval(eval_flags, eval_ckpt, tta_samples, dump_limit);
    if (dec->parsed()) return cmd_decompose(dec_flags, dec_ckpt, samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NonFiniteError& e) {
    std::cerr << "runtime divergence: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const TensorError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
