//
// Copyright 2026 The wpure Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WPURE_CONFIG_HPP
#define WPURE_CONFIG_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wpure/detectors.hpp"
#include "wpure/error.hpp"
#include "wpure/manipulation.hpp"
#include "wpure/probe.hpp"
#include "wpure/purifier.hpp"

namespace wpure {

using json = nlohmann::json;

enum class Scenario { PoisonTargeted, PoisonBackdoor, Tracing, DistributionMatch };
enum class BaselineKind { None, RandomNoise };

inline const char *to_string(Scenario s) {
  switch (s) {
  case Scenario::PoisonTargeted: return "poison_targeted";
  case Scenario::PoisonBackdoor: return "poison_backdoor";
  case Scenario::Tracing: return "tracing";
  case Scenario::DistributionMatch: return "distribution_match";
  }
  return "?";
}

struct DatasetSpec {
  std::string source = "synthetic"; // synthetic | file
  std::string generator;            // gaussian | ring | two_cluster; empty picks the scenario default
  std::string path, test_path;
  Index classes = 10;
  Index per_class = 100;
  Index test_per_class = 50;
  Index dim = 2;
  double scale = 0.05;
  double center_low = 0.3, center_high = 0.7; // gaussian generator: class centers uniform in this box
  double radius = 0.32;       // ring
  double clean_center = 0.3;  // two_cluster
  double shifted_center = 0.7;
  Index image_height = 0;     // 0: the input is one row of `dim` pixels
  Index image_width = 0;
};

struct ExtractorSpec {
  std::string kind = "identity"; // identity | file
  std::string path;
};

struct ManipulationSpec {
  bool enabled = true;
  double epsilon = 0.1;
  double fraction = 0.1;
  PgdConfig pgd;
  std::uint32_t base_label = 1;   // class the targeted input belongs to
  std::uint32_t target_label = 2; // label the attacker wants
  double target_position = 0.45;  // targeted input: base mean + position * (target mean - base mean)
  Index trigger_row = 0, trigger_col = 0, trigger_height = 1, trigger_width = 1;
  double trigger_value = 1.0;
};

struct DetectorConfig {
  DetectorSpec spec;
  bool auto_rate = true; // manip_rate from the realized flag count
};

struct BaselineSpec {
  BaselineKind kind = BaselineKind::None;
  double sigma = 16.0; // 0-255 pixel units
};

struct ExperimentConfig {
  Scenario scenario = Scenario::Tracing;
  std::uint64_t seed = 1;
  Index trials = 1;
  std::string output_dir = "results";
  DatasetSpec dataset;
  ExtractorSpec extractor;
  ManipulationSpec manipulation;
  DetectorConfig detector;
  bool purify = true;
  PurifyConfig purifier;
  BaselineSpec baseline;
  ProbeConfig probe;
  CombineMethod combine = CombineMethod::Fisher;
  Index w1_cap = 256; // subsample size for exact W1 in reports
};

namespace detail {

inline std::string fmt_num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// Reads typed fields from one JSON object, collecting every violation and
// flagging keys that were never read.
class Fields {
public:
  Fields(const json *obj, std::string prefix, std::vector<std::string> &errors)
      : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {
    if (obj_ != nullptr && !obj_->is_object()) {
      fail("", "must be an object");
      obj_ = nullptr;
    }
  }

  double real(const char *key, double def, const std::function<bool(double)> &ok = {}, const char *bound = "") {
    const json *v = find(key);
    if (v == nullptr) return def;
    if (!v->is_number()) return fail(key, "must be a number"), def;
    const double x = v->get<double>();
    if (!std::isfinite(x) || (ok && !ok(x))) return fail(key, std::string("must be ") + bound + " (got " + fmt_num(x) + ")"), def;
    return x;
  }

  Index integer(const char *key, Index def, Index min, Index max = std::numeric_limits<Index>::max()) {
    const json *v = find(key);
    if (v == nullptr) return def;
    if (!v->is_number_integer()) return fail(key, "must be an integer"), def;
    const auto x = v->get<std::int64_t>();
    if (x < min || x > max) {
      std::string range = ">= " + std::to_string(min);
      if (max != std::numeric_limits<Index>::max()) range = "in [" + std::to_string(min) + ", " + std::to_string(max) + "]";
      return fail(key, "must be " + range + " (got " + std::to_string(x) + ")"), def;
    }
    return static_cast<Index>(x);
  }

  std::uint64_t unsigned64(const char *key, std::uint64_t def) {
    const json *v = find(key);
    if (v == nullptr) return def;
    if (!v->is_number_unsigned()) return fail(key, "must be a non-negative integer"), def;
    return v->get<std::uint64_t>();
  }

  bool boolean(const char *key, bool def) {
    const json *v = find(key);
    if (v == nullptr) return def;
    if (!v->is_boolean()) return fail(key, "must be true or false"), def;
    return v->get<bool>();
  }

  std::string text(const char *key, std::string def) {
    const json *v = find(key);
    if (v == nullptr) return def;
    if (!v->is_string()) return fail(key, "must be a string"), def;
    return v->get<std::string>();
  }

  std::string choice(const char *key, std::string def, std::initializer_list<const char *> allowed) {
    const json *v = find(key);
    if (v == nullptr) return def;
    std::string options;
    for (const char *a : allowed) options += std::string(options.empty() ? "" : "|") + a;
    if (!v->is_string()) return fail(key, "must be one of " + options), def;
    const auto s = v->get<std::string>();
    for (const char *a : allowed)
      if (s == a) return s;
    return fail(key, "unknown value \"" + s + "\" (expected " + options + ")"), def;
  }

  bool has(const char *key) const { return obj_ != nullptr && obj_->contains(key); }

  /// Marks `key` as consumed and returns it, or null when absent.
  const json *find(const char *key) {
    seen_.insert(key);
    if (obj_ == nullptr) return nullptr;
    const auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  std::string path(const char *key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  void fail(const std::string &key, const std::string &msg) {
    errors_.push_back((key.empty() ? prefix_ : path(key.c_str())) + ": " + msg);
  }

  /// Reports every key that no accessor asked for.
  void finish() {
    if (obj_ == nullptr) return;
    for (const auto &[k, v] : obj_->items())
      if (!seen_.contains(k)) errors_.push_back(path(k.c_str()) + ": unknown key");
  }

private:
  const json *obj_;
  std::string prefix_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

inline const auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
inline const auto non_negative = [](double x) { return x >= 0.0; };
inline const auto positive = [](double x) { return x > 0.0; };

} // namespace detail

/// Parses and validates a configuration document. Every violation is collected
/// and thrown together as a ValidationError.
inline ExperimentConfig parse_config(const json &doc, const std::filesystem::path &base_dir = {}) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  detail::Fields top(&doc, "", errors);
  const std::string scenario = top.choice("scenario", "", {"poison_targeted", "poison_backdoor", "tracing", "distribution_match"});
  if (!top.has("scenario")) errors.push_back("scenario: required (poison_targeted|poison_backdoor|tracing|distribution_match)");
  if (scenario == "poison_targeted") c.scenario = Scenario::PoisonTargeted;
  else if (scenario == "poison_backdoor") c.scenario = Scenario::PoisonBackdoor;
  else if (scenario == "distribution_match") c.scenario = Scenario::DistributionMatch;
  else c.scenario = Scenario::Tracing;
  c.seed = top.unsigned64("seed", c.seed);
  c.trials = top.integer("trials", c.trials, 1);
  c.output_dir = top.text("output_dir", c.output_dir);

  const auto resolve = [&](const std::string &p) {
    if (p.empty()) return p;
    const std::filesystem::path fp(p);
    return (fp.is_absolute() || base_dir.empty() ? fp : base_dir / fp).string();
  };
  const auto require_file = [&](const std::string &field, const std::string &p) {
    if (p.empty()) errors.push_back(field + ": required");
    else if (!std::filesystem::is_regular_file(p)) errors.push_back(field + ": file not found: " + p);
  };

  {
    detail::Fields f(top.find("dataset"), "dataset", errors);
    auto &d = c.dataset;
    d.source = f.choice("source", d.source, {"synthetic", "file"});
    const char *def_gen = c.scenario == Scenario::PoisonTargeted      ? "ring"
                          : c.scenario == Scenario::DistributionMatch ? "two_cluster"
                                                                      : "gaussian";
    d.generator = f.choice("generator", def_gen, {"gaussian", "ring", "two_cluster"});
    d.path = resolve(f.text("path", ""));
    d.test_path = resolve(f.text("test_path", ""));
    d.classes = f.integer("classes", d.classes, 1, 1 << 20);
    d.per_class = f.integer("per_class", d.per_class, 1);
    d.test_per_class = f.integer("test_per_class", d.test_per_class, 0);
    d.dim = f.integer("dim", d.dim, 1);
    d.scale = f.real("scale", d.scale, detail::non_negative, ">= 0");
    d.center_low = f.real("center_low", d.center_low, detail::in_unit, "in [0,1]");
    d.center_high = f.real("center_high", d.center_high, detail::in_unit, "in [0,1]");
    d.radius = f.real("radius", d.radius, [](double r) { return r > 0.0 && r < 0.5; }, "in (0, 0.5)");
    d.clean_center = f.real("clean_center", d.clean_center, detail::in_unit, "in [0,1]");
    d.shifted_center = f.real("shifted_center", d.shifted_center, detail::in_unit, "in [0,1]");
    d.image_height = f.integer("image_height", d.image_height, 0);
    d.image_width = f.integer("image_width", d.image_width, 0);
    f.finish();
    if (d.source == "file") {
      require_file("dataset.path", d.path);
      if (!d.test_path.empty()) require_file("dataset.test_path", d.test_path);
    } else {
      if (d.generator == "ring" && d.dim != 2) errors.push_back("dataset.dim: the ring generator is 2-D (got " + std::to_string(d.dim) + ")");
      if (d.generator == "ring" && d.classes < 2) errors.push_back("dataset.classes: the ring generator needs >= 2 classes");
    }
    if (d.center_low > d.center_high) errors.push_back("dataset.center_low: must not exceed dataset.center_high");
    if ((d.image_height == 0) != (d.image_width == 0))
      errors.push_back("dataset.image_height/image_width: set both or neither");
    else if (d.image_height > 0 && d.source == "synthetic" && d.image_height * d.image_width != d.dim)
      errors.push_back("dataset.image_height*image_width: must equal dataset.dim (" + std::to_string(d.dim) + ")");
  }
  {
    detail::Fields f(top.find("extractor"), "extractor", errors);
    c.extractor.kind = f.choice("kind", c.extractor.kind, {"identity", "file"});
    c.extractor.path = resolve(f.text("path", ""));
    f.finish();
    if (c.extractor.kind == "file") require_file("extractor.path", c.extractor.path);
  }
  {
    detail::Fields f(top.find("manipulation"), "manipulation", errors);
    auto &m = c.manipulation;
    m.enabled = f.boolean("enabled", m.enabled);
    m.epsilon = f.real("epsilon", m.epsilon, detail::non_negative, ">= 0");
    m.fraction = f.real("fraction", m.fraction, detail::in_unit, "in [0,1]");
    m.pgd.steps = f.integer("steps", m.pgd.steps, 0);
    m.pgd.step_size = f.real("step_size", m.pgd.step_size, detail::non_negative, ">= 0");
    m.pgd.gamma = f.real("gamma", m.pgd.gamma, detail::non_negative, ">= 0");
    m.base_label = static_cast<std::uint32_t>(f.integer("base_label", m.base_label, 1, 1 << 20));
    m.target_label = static_cast<std::uint32_t>(f.integer("target_label", m.target_label, 1, 1 << 20));
    m.target_position = f.real("target_position", m.target_position, detail::in_unit, "in [0,1]");
    m.trigger_row = f.integer("trigger_row", m.trigger_row, 0);
    m.trigger_col = f.integer("trigger_col", m.trigger_col, 0);
    m.trigger_height = f.integer("trigger_height", m.trigger_height, 0);
    m.trigger_width = f.integer("trigger_width", m.trigger_width, 0);
    m.trigger_value = f.real("trigger_value", m.trigger_value, detail::in_unit, "in [0,1]");
    f.finish();
    const bool labels_checked = c.dataset.source == "synthetic";
    if (labels_checked && c.scenario != Scenario::DistributionMatch && c.scenario != Scenario::Tracing) {
      const auto classes = static_cast<std::uint32_t>(c.dataset.classes);
      if (m.target_label > classes) errors.push_back("manipulation.target_label: exceeds dataset.classes");
      if (c.scenario == Scenario::PoisonTargeted && m.base_label > classes)
        errors.push_back("manipulation.base_label: exceeds dataset.classes");
    }
    if (c.scenario == Scenario::PoisonTargeted && m.base_label == m.target_label)
      errors.push_back("manipulation.target_label: must differ from base_label");
    if (c.scenario == Scenario::PoisonBackdoor && c.dataset.source == "synthetic") {
      const Index h = c.dataset.image_height > 0 ? c.dataset.image_height : 1;
      const Index w = c.dataset.image_width > 0 ? c.dataset.image_width : c.dataset.dim;
      if (m.trigger_row + m.trigger_height > h || m.trigger_col + m.trigger_width > w)
        errors.push_back("manipulation.trigger: patch does not fit the " + std::to_string(h) + "x" + std::to_string(w) + " image");
    }
  }
  {
    detail::Fields f(top.find("detector"), "detector", errors);
    auto &d = c.detector;
    d.spec.kind = f.choice("kind", "simulated", {"simulated", "knn_kappa"}) == "simulated" ? DetectorKind::Simulated
                                                                                           : DetectorKind::KnnKappa;
    d.spec.q = f.real("q", d.spec.q, [](double q) { return q > 0.0 && q <= 1.0; }, "in (0,1]");
    d.spec.r = f.real("r", d.spec.r, detail::in_unit, "in [0,1]");
    if (const json *rate = f.find("manip_rate"); rate != nullptr && !(rate->is_string() && *rate == "auto")) {
      if (!rate->is_number() || !(rate->get<double>() >= 0.0 && rate->get<double>() < 1.0))
        errors.push_back("detector.manip_rate: must be \"auto\" or a number in [0,1)");
      else {
        d.auto_rate = false;
        d.spec.manip_rate = rate->get<double>();
      }
    }
    d.spec.k = f.integer("k", d.spec.k, 1);
    d.spec.kappa = f.integer("kappa", d.spec.kappa, 1);
    f.finish();
  }
  {
    detail::Fields f(top.find("purifier"), "purifier", errors);
    auto &p = c.purifier;
    c.purify = f.boolean("enabled", c.purify);
    p.eta_h = f.real("eta_h", p.eta_h, detail::positive, "> 0");
    p.eta_delta = f.real("eta_delta", p.eta_delta, detail::non_negative, ">= 0");
    p.rho = f.real("rho", p.rho, detail::in_unit, "in [0,1]");
    p.beta = f.real("beta", p.beta, detail::non_negative, ">= 0");
    p.nu = f.real("nu", p.nu, detail::non_negative, ">= 0");
    p.batch = f.integer("batch", p.batch, 1);
    p.lambda = f.real("lambda", p.lambda, detail::non_negative, ">= 0");
    p.checkpoint_interval = f.integer("checkpoint_interval", p.checkpoint_interval, 1);
    p.max_rounds = f.integer("max_rounds", p.max_rounds, 0);
    p.patience = f.integer("patience", p.patience, 1);
    p.hidden = f.integer("hidden", p.hidden, 1);
    p.max_inner_steps = f.integer("max_inner_steps", p.max_inner_steps, 1);
    p.critic_init_std = f.real("critic_init_std", p.critic_init_std, detail::non_negative, ">= 0");
    p.reg_form = f.choice("reg_form", "norm", {"norm", "squared_norm"}) == "norm" ? RegularizerForm::Norm
                                                                                  : RegularizerForm::SquaredNorm;
    f.finish();
  }
  {
    detail::Fields f(top.find("baseline"), "baseline", errors);
    c.baseline.kind = f.choice("kind", "none", {"none", "random_noise"}) == "none" ? BaselineKind::None : BaselineKind::RandomNoise;
    c.baseline.sigma = f.real("sigma", c.baseline.sigma, detail::non_negative, ">= 0");
    f.finish();
    if (c.purify && c.baseline.kind != BaselineKind::None)
      errors.push_back("baseline.kind: random_noise replaces the purifier; set purifier.enabled to false");
  }
  {
    detail::Fields f(top.find("probe"), "probe", errors);
    c.probe.epochs = f.integer("epochs", c.probe.epochs, 0);
    c.probe.lr = f.real("lr", c.probe.lr, detail::positive, "> 0");
    c.probe.batch = f.integer("batch", c.probe.batch, 1);
    f.finish();
  }
  {
    detail::Fields f(top.find("detection"), "detection", errors);
    c.combine = f.choice("combine", "fisher", {"fisher", "bonferroni"}) == "fisher" ? CombineMethod::Fisher : CombineMethod::Bonferroni;
    f.finish();
  }
  {
    detail::Fields f(top.find("evaluation"), "evaluation", errors);
    c.w1_cap = f.integer("w1_cap", c.w1_cap, 1);
    f.finish();
  }
  top.finish();
  if (!errors.empty()) throw ValidationError(std::move(errors));
  return c;
}

/// Reads a JSON document, reporting syntax errors as validation failures.
inline json read_config_json(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw ValidationError({path.string() + ": " + e.what()});
  }
}

/// Applies `a.b.c=value`; the value is read as JSON when it parses, else as a string.
inline void apply_override(json &doc, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError({"override \"" + assignment + "\": expected key.path=value"});
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error &) {
    value = raw;
  }
  json *node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError({"override \"" + assignment + "\": empty path component"});
    if (!node->is_object()) throw ValidationError({"override \"" + assignment + "\": " + key.substr(0, start) + " is not a section"});
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline ExperimentConfig load_config(const std::filesystem::path &path, const std::vector<std::string> &overrides = {}) {
  json doc = read_config_json(path);
  for (const auto &o : overrides) apply_override(doc, o);
  return parse_config(doc, path.parent_path());
}

/// Fully materialized configuration, suitable for replay through parse_config.
inline json to_json(const ExperimentConfig &c) {
  json j;
  j["scenario"] = to_string(c.scenario);
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["output_dir"] = c.output_dir;
  const auto &d = c.dataset;
  j["dataset"] = {{"source", d.source},         {"generator", d.generator},
                  {"path", d.path},             {"test_path", d.test_path},
                  {"classes", d.classes},       {"per_class", d.per_class},
                  {"test_per_class", d.test_per_class}, {"dim", d.dim},
                  {"scale", d.scale},           {"radius", d.radius},
                  {"center_low", d.center_low}, {"center_high", d.center_high},
                  {"clean_center", d.clean_center}, {"shifted_center", d.shifted_center},
                  {"image_height", d.image_height}, {"image_width", d.image_width}};
  j["extractor"] = {{"kind", c.extractor.kind}, {"path", c.extractor.path}};
  const auto &m = c.manipulation;
  j["manipulation"] = {{"enabled", m.enabled},          {"epsilon", m.epsilon},
                       {"fraction", m.fraction},        {"steps", m.pgd.steps},
                       {"step_size", m.pgd.step_size},  {"gamma", m.pgd.gamma},
                       {"base_label", m.base_label},    {"target_label", m.target_label},
                       {"target_position", m.target_position}, {"trigger_row", m.trigger_row},
                       {"trigger_col", m.trigger_col},  {"trigger_height", m.trigger_height},
                       {"trigger_width", m.trigger_width}, {"trigger_value", m.trigger_value}};
  const auto &ds = c.detector.spec;
  j["detector"] = {{"kind", to_string(ds.kind)}, {"q", ds.q}, {"r", ds.r}, {"k", ds.k}, {"kappa", ds.kappa}};
  j["detector"]["manip_rate"] = c.detector.auto_rate ? json("auto") : json(ds.manip_rate);
  const auto &p = c.purifier;
  j["purifier"] = {{"enabled", c.purify},
                   {"eta_h", p.eta_h},
                   {"eta_delta", p.eta_delta},
                   {"rho", p.rho},
                   {"beta", p.beta},
                   {"nu", p.nu},
                   {"batch", p.batch},
                   {"lambda", p.lambda},
                   {"checkpoint_interval", p.checkpoint_interval},
                   {"max_rounds", p.max_rounds},
                   {"patience", p.patience},
                   {"hidden", p.hidden},
                   {"max_inner_steps", p.max_inner_steps},
                   {"critic_init_std", p.critic_init_std},
                   {"reg_form", p.reg_form == RegularizerForm::Norm ? "norm" : "squared_norm"}};
  j["baseline"] = {{"kind", c.baseline.kind == BaselineKind::None ? "none" : "random_noise"}, {"sigma", c.baseline.sigma}};
  j["probe"] = {{"epochs", c.probe.epochs}, {"lr", c.probe.lr}, {"batch", c.probe.batch}};
  j["detection"] = {{"combine", to_string(c.combine)}};
  j["evaluation"] = {{"w1_cap", c.w1_cap}};
  return j;
}

} // namespace wpure

#endif // WPURE_CONFIG_HPP
