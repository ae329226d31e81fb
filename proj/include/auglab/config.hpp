#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auglab/experiment.hpp"

namespace auglab {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat dotted-key configuration: `key = value` lines, '#' comments. Flags
// override file values; the effective config can be echoed for provenance.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    KeyValueConfig cfg;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "': not a number: " + it->second);
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "': not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false: " + it->second);
  }

  void check_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_)
      if (known.find(key) == known.end())
        throw ConfigError("unknown config key '" + key + "'");
  }

  void echo(std::ostream& out) const {
    for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  }

 private:
  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
  }

  std::map<std::string, std::string> values_;
};

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> kKnown = {
      "task", "mode", "transforms", "seed", "out",
      "entropy.h_min", "entropy.h_max", "entropy.eta",
      "lambda.init", "lambda.dynamic", "lambda.cadence",
      "train.epochs", "train.batch_size", "train.warmup_epochs",
      "train.lr_classifier", "train.lr_phi", "train.momentum",
      "train.weight_decay_classifier", "train.weight_decay_phi", "train.momentum_phi",
      "tta.samples",
      "data.train", "data.test",
      "crop.out_side", "lrp.blocks", "lrp.channels", "lrp.layer_prior",
      "random.crop_min", "random.crop_max", "random.rotation",
      "random.dh", "random.ds", "random.dv",
      "contrastive.temperature", "contrastive.proj_dim",
      "probe.steps", "probe.lr",
      "net.cls_c1", "net.cls_c2", "net.cls_hidden",
      "net.phi_c1", "net.phi_c2", "net.phi_hidden",
      "fixed.classifier",
      "gen.n_train", "gen.n_test", "gen.label_noise",
      "gen.conditions", "gen.n_per_condition", "gen.n_test_per_condition",
  };
  return kKnown;
}

inline Task parse_task(const std::string& name) {
  if (name == "glyphs") return Task::kGlyphs;
  if (name == "textures") return Task::kTextures;
  if (name == "composites") return Task::kComposites;
  throw ConfigError("unknown task '" + name + "' (glyphs|textures|composites)");
}

inline Mode parse_mode(const std::string& name) {
  if (name == "no-aug") return Mode::kNoAug;
  if (name == "instaaug") return Mode::kInstaAug;
  if (name == "augerino") return Mode::kAugerino;
  if (name == "global-instaaug") return Mode::kGlobalInstaAug;
  if (name == "random-aug") return Mode::kRandomAug;
  if (name == "fixed-classifier") return Mode::kFixedClassifier;
  if (name == "contrastive") return Mode::kContrastive;
  throw ConfigError("unknown mode '" + name + "'");
}

inline std::string task_name(Task t) {
  switch (t) {
    case Task::kGlyphs: return "glyphs";
    case Task::kTextures: return "textures";
    default: return "composites";
  }
}

inline std::string default_transforms(Task t) {
  switch (t) {
    case Task::kGlyphs: return "rotation";
    case Task::kTextures: return "hsv";
    default: return "crop";
  }
}

// Mode/transform compatibility: categorical crop laws pair with the crop
// transform only; uniform heads pair with rotation/hsv only.
inline void validate_mode_transforms(Task task, Mode mode, const std::string& transforms) {
  const std::string expected = default_transforms(task);
  if (transforms != expected)
    throw ConfigError("task '" + task_name(task) + "' uses transforms '" + expected +
                      "', not '" + transforms + "'");
  const bool crop = transforms == "crop";
  if (mode == Mode::kGlobalInstaAug && !crop)
    throw ConfigError("mode global-instaaug requires the crop transform");
  if (mode == Mode::kAugerino && crop)
    throw ConfigError("mode augerino supports rotation/hsv transforms only");
  if (mode == Mode::kContrastive && !crop)
    throw ConfigError("mode contrastive is implemented for the crop transform");
}

inline RunOptions options_from_config(const KeyValueConfig& cfg) {
  cfg.check_known(known_config_keys());
  RunOptions opt;
  opt.task = parse_task(cfg.get_string("task", "glyphs"));
  opt.mode = parse_mode(cfg.get_string("mode", "instaaug"));
  const std::string transforms =
      cfg.get_string("transforms", default_transforms(opt.task));
  validate_mode_transforms(opt.task, opt.mode, transforms);

  opt.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  opt.epochs = static_cast<int>(cfg.get_int("train.epochs", opt.epochs));
  opt.batch_size = static_cast<int>(cfg.get_int("train.batch_size", opt.batch_size));
  opt.warmup_epochs = static_cast<int>(cfg.get_int("train.warmup_epochs", opt.warmup_epochs));
  opt.lr_classifier = cfg.get_double("train.lr_classifier", opt.lr_classifier);
  opt.lr_phi = cfg.get_double("train.lr_phi", opt.lr_phi);
  opt.momentum = cfg.get_double("train.momentum", opt.momentum);
  opt.momentum_phi = cfg.get_double("train.momentum_phi", opt.momentum);
  opt.weight_decay_classifier =
      cfg.get_double("train.weight_decay_classifier", opt.weight_decay_classifier);
  opt.weight_decay_phi = cfg.get_double("train.weight_decay_phi", opt.weight_decay_phi);
  opt.lambda_init = cfg.get_double("lambda.init", opt.lambda_init);
  opt.dynamic_lambda = cfg.get_bool("lambda.dynamic", opt.dynamic_lambda);
  const std::string cadence = cfg.get_string("lambda.cadence", "epoch");
  if (cadence == "batch")
    opt.lambda_per_batch = true;
  else if (cadence != "epoch")
    throw ConfigError("lambda.cadence must be 'epoch' or 'batch'");
  opt.h_min = cfg.get_double("entropy.h_min", opt.h_min);
  opt.h_max = cfg.get_double("entropy.h_max", opt.h_max);
  opt.eta = cfg.get_double("entropy.eta", opt.eta);
  opt.tta_samples = static_cast<int>(cfg.get_int("tta.samples", opt.tta_samples));

  opt.crop_out_side = static_cast<int>(cfg.get_int("crop.out_side", opt.crop_out_side));
  opt.lrp_blocks = static_cast<int>(cfg.get_int("lrp.blocks", opt.lrp_blocks));
  opt.lrp_channels = static_cast<int>(cfg.get_int("lrp.channels", opt.lrp_channels));
  opt.lrp_layer_prior = cfg.get_double("lrp.layer_prior", opt.lrp_layer_prior);
  opt.random_crop_min = cfg.get_double("random.crop_min", opt.random_crop_min);
  opt.random_crop_max = cfg.get_double("random.crop_max", opt.random_crop_max);
  opt.random_rotation = cfg.get_double("random.rotation", opt.random_rotation);
  opt.random_dh = cfg.get_double("random.dh", opt.random_dh);
  opt.random_ds = cfg.get_double("random.ds", opt.random_ds);
  opt.random_dv = cfg.get_double("random.dv", opt.random_dv);

  opt.contrast_temperature = cfg.get_double("contrastive.temperature", opt.contrast_temperature);
  opt.proj_dim = static_cast<int>(cfg.get_int("contrastive.proj_dim", opt.proj_dim));
  opt.probe_steps = static_cast<int>(cfg.get_int("probe.steps", opt.probe_steps));
  opt.probe_lr = cfg.get_double("probe.lr", opt.probe_lr);

  opt.cls_c1 = static_cast<int>(cfg.get_int("net.cls_c1", opt.cls_c1));
  opt.cls_c2 = static_cast<int>(cfg.get_int("net.cls_c2", opt.cls_c2));
  opt.cls_hidden = static_cast<int>(cfg.get_int("net.cls_hidden", opt.cls_hidden));
  opt.phi_c1 = static_cast<int>(cfg.get_int("net.phi_c1", opt.phi_c1));
  opt.phi_c2 = static_cast<int>(cfg.get_int("net.phi_c2", opt.phi_c2));
  opt.phi_hidden = static_cast<int>(cfg.get_int("net.phi_hidden", opt.phi_hidden));

  opt.fixed_classifier_path = cfg.get_string("fixed.classifier", "");
  return opt;
}

inline std::vector<int> parse_condition_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ConfigError("bad condition list entry '" + item + "'");
    }
  }
  return out;
}

}  // namespace auglab
