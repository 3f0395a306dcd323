#pragma once

/// @file config.hpp
/// Experiment configuration: a TOML-like file of [section] key = value
/// lines, read with CLI11's config reader, mapped onto typed settings.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boxopt/errors.hpp"
#include "boxopt/eval.hpp"
#include "boxopt/fgs.hpp"
#include "boxopt/harness/dataset.hpp"
#include "boxopt/proposals.hpp"
#include "boxopt/structsvm.hpp"

namespace boxopt::harness {

/// Flat "section.key" -> values view of a config file. Getters record which
/// keys were read so that leftovers (typos) can be rejected.
class ConfigTable {
 public:
  static ConfigTable parse(std::istream& is, const std::string& source = "config") {
    ConfigTable t;
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(is);
    } catch (const CLI::Error& e) {
      throw ConfigError(source + ": " + e.what());
    }
    for (const auto& it : items) {
      if (it.name == "++" || it.name == "--") continue;
      std::string key;
      for (const auto& p : it.parents) key += p + ".";
      key += it.name;
      if (!t.values_.emplace(key, it.inputs).second) {
        throw ConfigError(source + ": " + key + ": duplicate key");
      }
    }
    return t;
  }

  static ConfigTable from_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static ConfigTable from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse(is, path);
  }

  void set(const std::string& key, std::vector<std::string> values) {
    values_[key] = std::move(values);
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& def) const {
    const auto* v = scalar(key);
    return v ? *v : def;
  }

  double get_double(const std::string& key, double def) const {
    const auto* v = scalar(key);
    if (!v) return def;
    return to_double(key, *v);
  }

  std::int64_t get_int(const std::string& key, std::int64_t def) const {
    const auto* v = scalar(key);
    if (!v) return def;
    std::int64_t out = 0;
    const auto r = std::from_chars(v->data(), v->data() + v->size(), out);
    if (r.ec != std::errc() || r.ptr != v->data() + v->size()) {
      throw ConfigError(key + ": expected an integer, got '" + *v + "'");
    }
    return out;
  }

  std::size_t get_size(const std::string& key, std::size_t def) const {
    const auto v = get_int(key, static_cast<std::int64_t>(def));
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    const auto* v = scalar(key);
    if (!v) return def;
    std::uint64_t out = 0;
    const auto r = std::from_chars(v->data(), v->data() + v->size(), out);
    if (r.ec != std::errc() || r.ptr != v->data() + v->size()) {
      throw ConfigError(key + ": expected a non-negative integer, got '" + *v + "'");
    }
    return out;
  }

  bool get_bool(const std::string& key, bool def) const {
    const auto* v = scalar(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + *v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    used_.insert(key);
    std::vector<double> out;
    for (const auto& s : it->second) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key,
                                       std::vector<std::string> def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    used_.insert(key);
    return it->second;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw ConfigError(k + ": unknown key");
    }
  }

 private:
  const std::string* scalar(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    if (it->second.size() != 1) throw ConfigError(key + ": expected a single value");
    return &it->second.front();
  }

  static double to_double(const std::string& key, const std::string& s) {
    double out = 0.0;
    if (!parse_double(s, out) || !std::isfinite(out)) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
    return out;
  }

  std::map<std::string, std::vector<std::string>> values_;
  mutable std::set<std::string> used_;
};

struct FeatureSpec {
  /// "synthetic" (SyntheticWorld over the manifest) or "file" (BXF1).
  std::string kind = "synthetic";
  std::string path;
  std::size_t dim = 16;
  double noise = 0.1;
  std::uint64_t seed = 0;
  /// Prototype order; empty = the manifest's categories, sorted.
  std::vector<std::string> categories;
};

struct GpSpec {
  /// Existing parameter file; empty = fit one.
  std::string params;
  double rho = 0.3;
  std::size_t random_extra = 50;
  /// Size of the synthesized training set oracle-exp fits on.
  std::size_t train_images = 40;
  std::uint64_t seed = 0;
  HyperFitOptions fit;
};

struct TrainSpec {
  TrainConfig svm;
  bool mining = true;
  /// Negative candidates overlap no object of the category above this IoU.
  double negative_iou = 0.3;
  /// A positive's candidates exclude boxes on another object of the same
  /// category (IoU at or above this).
  double other_object_iou = 0.5;
};

struct RefineSpec {
  bool fgs = true;
  double score_threshold = 0.0;
  double nms_threshold = 0.3;
};

struct EvalSpec {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  ApMode mode = ApMode::eleven_point;
  std::string detections;
  std::string method = "detections";
};

struct OracleSpec {
  double random_rho = 0.3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string manifest;
  std::string split;
  SynthConfig synth;
  std::string proposals;
  PerturbConfig perturb;
  std::string scorer = "oracle";
  std::string model;
  FeatureSpec features;
  GpSpec gp;
  FgsConfig fgs;
  TrainSpec train;
  RefineSpec refine;
  EvalSpec eval;
  OracleSpec oracle;
};

namespace detail {

inline std::string toml_value(double v) { return format_double(v); }
inline std::string toml_value(bool v) { return v ? "true" : "false"; }
inline std::string toml_value(const std::string& v) {
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}
inline std::string toml_value(std::uint64_t v) { return std::to_string(v); }
inline std::string toml_value(int v) { return std::to_string(v); }
inline std::string toml_value(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out + "]";
}
inline std::string toml_value(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + toml_value(v[i]);
  return out + "]";
}

inline std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

inline void require_file(const std::string& key, const std::string& p) {
  if (!p.empty() && !std::filesystem::exists(p)) {
    throw ConfigError(key + ": file not found: " + p);
  }
}

}  // namespace detail

/// Effective settings as ordered (section, key, TOML value) triples. The
/// output directory is not part of it.
inline std::vector<std::array<std::string, 3>> effective_settings(const ExperimentConfig& c) {
  using detail::toml_value;
  std::vector<std::array<std::string, 3>> s;
  auto add = [&](const char* sec, const char* key, std::string v) {
    s.push_back({sec, key, std::move(v)});
  };
  add("", "seed", toml_value(c.seed));
  add("dataset", "manifest", toml_value(c.manifest));
  add("dataset", "split", toml_value(c.split));
  add("synth", "images", toml_value(std::uint64_t{c.synth.images}));
  add("synth", "min_objects", toml_value(std::uint64_t{c.synth.min_objects}));
  add("synth", "max_objects", toml_value(std::uint64_t{c.synth.max_objects}));
  add("synth", "categories", toml_value(c.synth.categories));
  add("synth", "min_image_side", toml_value(c.synth.min_image_side));
  add("synth", "max_image_side", toml_value(c.synth.max_image_side));
  add("synth", "min_object_frac", toml_value(c.synth.min_object_frac));
  add("synth", "max_object_frac", toml_value(c.synth.max_object_frac));
  add("synth", "max_object_overlap", toml_value(c.synth.max_object_overlap));
  add("synth", "split", toml_value(c.synth.split));
  add("synth", "id_prefix", toml_value(c.synth.id_prefix));
  add("synth", "seed", toml_value(c.synth.seed));
  add("proposals", "path", toml_value(c.proposals));
  add("proposals", "boxes_per_gt", toml_value(std::uint64_t{c.perturb.boxes_per_gt}));
  add("proposals", "center_jitter", toml_value(c.perturb.center_jitter));
  add("proposals", "log_size_jitter", toml_value(c.perturb.log_size_jitter));
  add("proposals", "background_count", toml_value(std::uint64_t{c.perturb.background_count}));
  add("proposals", "background_min_frac", toml_value(c.perturb.background_min_frac));
  add("proposals", "background_max_frac", toml_value(c.perturb.background_max_frac));
  add("proposals", "seed", toml_value(c.perturb.seed));
  add("scorer", "kind", toml_value(c.scorer));
  add("scorer", "model", toml_value(c.model));
  add("features", "kind", toml_value(c.features.kind));
  add("features", "path", toml_value(c.features.path));
  add("features", "dim", toml_value(std::uint64_t{c.features.dim}));
  add("features", "noise", toml_value(c.features.noise));
  add("features", "seed", toml_value(c.features.seed));
  add("features", "categories", toml_value(c.features.categories));
  add("gp", "params", toml_value(c.gp.params));
  add("gp", "rho", toml_value(c.gp.rho));
  add("gp", "random_extra", toml_value(std::uint64_t{c.gp.random_extra}));
  add("gp", "train_images", toml_value(std::uint64_t{c.gp.train_images}));
  add("gp", "seed", toml_value(c.gp.seed));
  add("gp", "max_iterations", toml_value(c.gp.fit.lbfgs.max_iterations));
  add("fgs", "t_max", toml_value(c.fgs.t_max));
  add("fgs", "rho_levels", toml_value(c.fgs.rho_levels));
  add("fgs", "f_prune", toml_value(c.fgs.f_prune));
  add("fgs", "nms_threshold", toml_value(c.fgs.nms_threshold));
  add("fgs", "min_ei", toml_value(c.fgs.min_ei));
  add("fgs", "max_local_obs", toml_value(std::uint64_t{c.fgs.max_local_obs}));
  add("fgs", "search_margin", toml_value(c.fgs.search_margin));
  add("fgs", "duplicate_tolerance", toml_value(c.fgs.duplicate_tolerance));
  add("train", "C1", toml_value(c.train.svm.C1));
  add("train", "C2", toml_value(c.train.svm.C2));
  add("train", "update_threshold", toml_value(std::uint64_t{c.train.svm.update_threshold}));
  add("train", "epochs", toml_value(c.train.svm.epochs));
  add("train", "eps1", toml_value(c.train.svm.eps1));
  add("train", "eps2", toml_value(c.train.svm.eps2));
  add("train", "gradient_tolerance", toml_value(c.train.svm.gradient_tolerance));
  add("train", "max_iterations", toml_value(c.train.svm.max_iterations));
  add("train", "balance_first_epoch", toml_value(c.train.svm.balance_first_epoch));
  add("train", "mining", toml_value(c.train.mining));
  add("train", "negative_iou", toml_value(c.train.negative_iou));
  add("train", "other_object_iou", toml_value(c.train.other_object_iou));
  add("refine", "fgs", toml_value(c.refine.fgs));
  add("refine", "score_threshold", toml_value(c.refine.score_threshold));
  add("refine", "nms_threshold", toml_value(c.refine.nms_threshold));
  add("eval", "thresholds", toml_value(c.eval.thresholds));
  add("eval", "mode", toml_value(std::string(c.eval.mode == ApMode::all_points ? "all_points" : "eleven_point")));
  add("eval", "detections", toml_value(c.eval.detections));
  add("eval", "method", toml_value(c.eval.method));
  add("oracle", "random_rho", toml_value(c.oracle.random_rho));
  return s;
}

/// The effective settings as a config file that loads back to the same
/// configuration.
inline std::string effective_config_text(const ExperimentConfig& c) {
  std::string out, section = "\x01";
  for (const auto& [sec, key, val] : effective_settings(c)) {
    if (sec != section) {
      if (!sec.empty()) out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key + " = " + val + "\n";
  }
  return out;
}

inline std::uint64_t config_fingerprint(const ExperimentConfig& c) {
  const auto text = effective_config_text(c);
  return boxopt::detail::fnv1a(text.data(), text.size());
}

/// FNV-1a over the effective settings, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_fingerprint(c)));
  return buf;
}

/// Typed configuration from a table. Relative paths are resolved against
/// `base_dir`; referenced files must exist. Sub-seeds default to `seed`.
inline ExperimentConfig load_experiment_config(const ConfigTable& t,
                                               const std::string& base_dir = {}) {
  ExperimentConfig c;
  c.seed = t.get_u64("seed", c.seed);
  c.out = t.get_string("out", c.out);

  c.manifest = detail::resolve(t.get_string("dataset.manifest", ""), base_dir);
  c.split = t.get_string("dataset.split", "");

  auto& s = c.synth;
  s.images = t.get_size("synth.images", s.images);
  s.min_objects = t.get_size("synth.min_objects", s.min_objects);
  s.max_objects = t.get_size("synth.max_objects", s.max_objects);
  s.categories = t.get_strings("synth.categories", s.categories);
  s.min_image_side = t.get_double("synth.min_image_side", s.min_image_side);
  s.max_image_side = t.get_double("synth.max_image_side", s.max_image_side);
  s.min_object_frac = t.get_double("synth.min_object_frac", s.min_object_frac);
  s.max_object_frac = t.get_double("synth.max_object_frac", s.max_object_frac);
  s.max_object_overlap = t.get_double("synth.max_object_overlap", s.max_object_overlap);
  s.split = t.get_string("synth.split", s.split);
  s.id_prefix = t.get_string("synth.id_prefix", s.id_prefix);
  s.seed = t.get_u64("synth.seed", c.seed);

  c.proposals = detail::resolve(t.get_string("proposals.path", ""), base_dir);
  auto& p = c.perturb;
  p.boxes_per_gt = t.get_size("proposals.boxes_per_gt", p.boxes_per_gt);
  p.center_jitter = t.get_double("proposals.center_jitter", p.center_jitter);
  p.log_size_jitter = t.get_double("proposals.log_size_jitter", p.log_size_jitter);
  p.background_count = t.get_size("proposals.background_count", p.background_count);
  p.background_min_frac = t.get_double("proposals.background_min_frac", p.background_min_frac);
  p.background_max_frac = t.get_double("proposals.background_max_frac", p.background_max_frac);
  p.seed = t.get_u64("proposals.seed", c.seed);

  c.scorer = t.get_string("scorer.kind", c.scorer);
  c.model = detail::resolve(t.get_string("scorer.model", ""), base_dir);

  auto& f = c.features;
  f.kind = t.get_string("features.kind", f.kind);
  f.path = detail::resolve(t.get_string("features.path", ""), base_dir);
  f.dim = t.get_size("features.dim", f.dim);
  f.noise = t.get_double("features.noise", f.noise);
  f.seed = t.get_u64("features.seed", c.seed);
  f.categories = t.get_strings("features.categories", f.categories);

  auto& g = c.gp;
  g.params = detail::resolve(t.get_string("gp.params", ""), base_dir);
  g.rho = t.get_double("gp.rho", g.rho);
  g.random_extra = t.get_size("gp.random_extra", g.random_extra);
  g.train_images = t.get_size("gp.train_images", g.train_images);
  g.seed = t.get_u64("gp.seed", c.seed);
  g.fit.lbfgs.max_iterations =
      static_cast<int>(t.get_int("gp.max_iterations", g.fit.lbfgs.max_iterations));

  auto& q = c.fgs;
  q.t_max = static_cast<int>(t.get_int("fgs.t_max", q.t_max));
  q.rho_levels = t.get_doubles("fgs.rho_levels", q.rho_levels);
  // Oracle scores live in [0, 1]; 0.05 keeps the near-miss tails of the
  // proposal cloud from each becoming a search region.
  q.f_prune = t.get_double("fgs.f_prune", c.scorer == "oracle" ? 0.05 : 0.0);
  q.nms_threshold = t.get_double("fgs.nms_threshold", q.nms_threshold);
  q.min_ei = t.get_double("fgs.min_ei", q.min_ei);
  q.max_local_obs = t.get_size("fgs.max_local_obs", q.max_local_obs);
  q.search_margin = t.get_double("fgs.search_margin", q.search_margin);
  q.duplicate_tolerance = t.get_double("fgs.duplicate_tolerance", q.duplicate_tolerance);

  auto& r = c.train;
  r.svm.C1 = t.get_double("train.C1", r.svm.C1);
  r.svm.C2 = t.get_double("train.C2", r.svm.C2);
  r.svm.update_threshold = t.get_size("train.update_threshold", r.svm.update_threshold);
  r.svm.epochs = static_cast<int>(t.get_int("train.epochs", r.svm.epochs));
  r.svm.eps1 = t.get_double("train.eps1", r.svm.eps1);
  r.svm.eps2 = t.get_double("train.eps2", r.svm.eps2);
  r.svm.gradient_tolerance = t.get_double("train.gradient_tolerance", r.svm.gradient_tolerance);
  r.svm.max_iterations = static_cast<int>(t.get_int("train.max_iterations", r.svm.max_iterations));
  r.svm.balance_first_epoch = t.get_bool("train.balance_first_epoch", r.svm.balance_first_epoch);
  r.svm.until_stable = t.get_bool("train.until_stable", r.svm.until_stable);
  r.svm.max_passes = static_cast<int>(t.get_int("train.max_passes", r.svm.max_passes));
  r.svm.seed = c.seed;
  r.mining = t.get_bool("train.mining", r.mining);
  r.negative_iou = t.get_double("train.negative_iou", r.negative_iou);
  r.other_object_iou = t.get_double("train.other_object_iou", r.other_object_iou);

  c.refine.fgs = t.get_bool("refine.fgs", c.refine.fgs);
  c.refine.score_threshold = t.get_double("refine.score_threshold", c.refine.score_threshold);
  c.refine.nms_threshold = t.get_double("refine.nms_threshold", c.refine.nms_threshold);

  c.eval.thresholds = t.get_doubles("eval.thresholds", c.eval.thresholds);
  const auto mode = t.get_string("eval.mode", "eleven_point");
  if (mode == "eleven_point") {
    c.eval.mode = ApMode::eleven_point;
  } else if (mode == "all_points") {
    c.eval.mode = ApMode::all_points;
  } else {
    throw ConfigError("eval.mode: expected eleven_point or all_points, got '" + mode + "'");
  }
  c.eval.detections = detail::resolve(t.get_string("eval.detections", ""), base_dir);
  c.eval.method = t.get_string("eval.method", c.eval.method);

  c.oracle.random_rho = t.get_double("oracle.random_rho", c.oracle.random_rho);

  t.reject_unknown();

  // Validation, reported with the offending key.
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  for (std::size_t i = 0; i < c.eval.thresholds.size(); ++i) {
    if (!in_unit(c.eval.thresholds[i]) ||
        (i > 0 && !(c.eval.thresholds[i] > c.eval.thresholds[i - 1]))) {
      throw ConfigError("eval.thresholds: must be strictly increasing in (0,1)");
    }
  }
  if (c.eval.thresholds.empty()) throw ConfigError("eval.thresholds: empty");
  if (c.scorer != "oracle" && c.scorer != "linear") {
    throw ConfigError("scorer.kind: expected oracle or linear, got '" + c.scorer + "'");
  }
  if (c.features.kind != "synthetic" && c.features.kind != "file") {
    throw ConfigError("features.kind: expected synthetic or file, got '" + c.features.kind + "'");
  }
  if (c.features.kind == "file" && c.features.path.empty()) {
    throw ConfigError("features.path: required when features.kind = \"file\"");
  }
  if (!in_unit(c.gp.rho)) throw ConfigError("gp.rho: must lie in (0,1)");
  if (!in_unit(c.oracle.random_rho)) throw ConfigError("oracle.random_rho: must lie in (0,1)");
  if (!in_unit(c.refine.nms_threshold)) throw ConfigError("refine.nms_threshold: must lie in (0,1)");
  if (!in_unit(c.train.negative_iou)) throw ConfigError("train.negative_iou: must lie in (0,1)");
  if (!in_unit(c.train.other_object_iou)) {
    throw ConfigError("train.other_object_iou: must lie in (0,1)");
  }
  if (c.synth.min_objects > c.synth.max_objects) {
    throw ConfigError("synth.min_objects: exceeds synth.max_objects");
  }
  if (c.synth.categories.empty()) throw ConfigError("synth.categories: empty");
  if (!(c.synth.min_image_side > 0 && c.synth.min_image_side <= c.synth.max_image_side)) {
    throw ConfigError("synth.min_image_side: need 0 < min_image_side <= max_image_side");
  }
  if (!(c.synth.min_object_frac > 0 && c.synth.min_object_frac <= c.synth.max_object_frac &&
        c.synth.max_object_frac <= 1)) {
    throw ConfigError("synth.min_object_frac: need 0 < min <= max <= 1");
  }
  if (c.features.dim < 2) throw ConfigError("features.dim: must be >= 2");
  c.fgs.validate();
  c.perturb.validate();
  c.train.svm.validate();

  detail::require_file("dataset.manifest", c.manifest);
  detail::require_file("proposals.path", c.proposals);
  detail::require_file("features.path", c.features.path);
  // scorer.model, gp.params and eval.detections are checked by the commands
  // that read them, so one config can describe a whole pipeline.
  return c;
}

inline ExperimentConfig load_experiment_config_file(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path().string();
  return load_experiment_config(ConfigTable::from_file(path), dir);
}

}  // namespace boxopt::harness
