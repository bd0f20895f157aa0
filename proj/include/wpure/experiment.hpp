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

#ifndef WPURE_EXPERIMENT_HPP
#define WPURE_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "wpure/config.hpp"
#include "wpure/detectors.hpp"
#include "wpure/manipulation.hpp"
#include "wpure/ot.hpp"
#include "wpure/probe.hpp"
#include "wpure/purifier.hpp"
#include "wpure/synthetic.hpp"

namespace wpure {

struct TrialRecord {
  Index index = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string stage; // failing stage when !ok
  std::string error;
  std::map<std::string, double> metrics;
  std::vector<Index> reference;
  std::optional<DetectionReport> detection;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0; // kept out of the report so reports stay byte-identical
};

/// Metrics that are 0/1 per trial and summarized as "hits/trials".
inline bool is_count_metric(const std::string &name) { return name == "asr_hit" || name == "flagged"; }

namespace detail {

inline Dataset rows_of(const Dataset &d, std::span<const Index> idx) { return d.subset(idx); }

inline Vector class_mean(const Dataset &d, std::uint32_t label) {
  const auto members = d.class_members(label);
  if (members.empty()) throw PreconditionError("class " + std::to_string(label) + " has no members");
  Vector m = Vector::Zero(d.dim());
  for (Index i : members) m += d.input(i);
  return m / static_cast<double>(members.size());
}

// Exact W1 between equal-size subsamples of two feature sets; the same row
// choice is reused for `a_alt` so before/after values are paired.
struct PairedW1 {
  double before = 0.0;
  double after = 0.0;
};

inline PairedW1 paired_w1(const RowMatrix &a, const RowMatrix &a_alt, const RowMatrix &b, Index cap, SeedStream &rng) {
  const Index m = std::min({a.rows(), b.rows(), cap});
  if (m == 0) return {};
  std::vector<Index> ia(static_cast<std::size_t>(a.rows())), ib(static_cast<std::size_t>(b.rows()));
  std::iota(ia.begin(), ia.end(), Index{0});
  std::iota(ib.begin(), ib.end(), Index{0});
  ia = sample_without_replacement(std::move(ia), static_cast<std::uint64_t>(m), rng);
  ib = sample_without_replacement(std::move(ib), static_cast<std::uint64_t>(m), rng);
  RowMatrix sa(m, a.cols()), salt(m, a.cols()), sb(m, b.cols());
  for (Index r = 0; r < m; ++r) {
    sa.row(r) = a.row(ia[static_cast<std::size_t>(r)]);
    salt.row(r) = a_alt.row(ia[static_cast<std::size_t>(r)]);
    sb.row(r) = b.row(ib[static_cast<std::size_t>(r)]);
  }
  return {exact_w1(sa, sb), exact_w1(salt, sb)};
}

struct StageError {
  std::string stage;
  std::string message;
};

template <class F> auto stage(const char *name, F &&f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError{name, e.what()};
  }
}

} // namespace detail

/// Runs one seeded repetition: data, manipulation, detection, purification
/// (or baseline), probe training and evaluation. Stage failures are recorded
/// in the returned record instead of thrown.
inline TrialRecord run_trial(const ExperimentConfig &cfg, Index index) {
  TrialRecord rec;
  rec.index = index;
  rec.seed = cfg.seed + static_cast<std::uint64_t>(index);
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = rec.seed;
  auto &M = rec.metrics;
  try {
    // data
    SyntheticSplit split;
    FeatureExtractor g = FeatureExtractor::identity(1);
    detail::stage("data", [&] {
      const auto &ds = cfg.dataset;
      if (ds.source == "file") {
        split.train = load_dataset(ds.path);
        split.test = ds.test_path.empty() ? split.train.subset(std::vector<Index>{}) : load_dataset(ds.test_path);
        if (split.test.size() > 0 && split.test.dim() != split.train.dim())
          throw DimensionError("test set width differs from training set width");
      } else {
        SeedStream rng(seed, Stream::DataGeneration);
        if (ds.generator == "ring") split = ring_classes(ds.classes, ds.per_class, ds.test_per_class, ds.radius, ds.scale, rng);
        else if (ds.generator == "two_cluster") split = two_cluster(ds.per_class, ds.dim, ds.clean_center, ds.shifted_center, ds.scale, rng);
        else split = gaussian_classes(ds.classes, ds.per_class, ds.test_per_class, ds.dim, ds.scale, rng, ds.center_low, ds.center_high);
      }
      g = cfg.extractor.kind == "file" ? load_extractor(cfg.extractor.path) : FeatureExtractor::identity(split.train.dim());
      if (g.input_dim() != split.train.dim())
        throw DimensionError("extractor expects width " + std::to_string(g.input_dim()) + ", data has " +
                             std::to_string(split.train.dim()));
    });
    const Dataset &clean = split.train;
    M["train_size"] = static_cast<double>(clean.size());

    // manipulation
    Dataset train = clean;
    std::optional<MarkSet> marks;
    std::vector<TargetInput> targets;
    std::optional<Trigger> trigger;
    const auto &mp = cfg.manipulation;
    detail::stage("manipulate", [&] {
      switch (cfg.scenario) {
      case Scenario::Tracing: {
        SeedStream mark_rng(seed, Stream::MarkGeneration), sel(seed, Stream::Manipulation);
        marks = gen_marks(static_cast<Index>(clean.num_classes), g.output_dim(), mark_rng, mp.fraction, mp.epsilon);
        if (mp.enabled) train = mark_inputs(clean, *marks, g, mp.pgd, sel);
        break;
      }
      case Scenario::PoisonTargeted: {
        const Vector base = detail::class_mean(clean, mp.base_label), tgt = detail::class_mean(clean, mp.target_label);
        targets.push_back({base + mp.target_position * (tgt - base), mp.target_label});
        if (mp.enabled) train = poison_feature_collision(clean, targets[0].x, mp.target_label, mp.fraction, mp.epsilon, g, mp.pgd);
        break;
      }
      case Scenario::PoisonBackdoor: {
        const Index h = cfg.dataset.image_height > 0 ? cfg.dataset.image_height : 1;
        const Index w = cfg.dataset.image_width > 0 ? cfg.dataset.image_width : clean.dim();
        trigger = Trigger{h, w, mp.trigger_row, mp.trigger_col, mp.trigger_height, mp.trigger_width,
                          std::vector<double>(static_cast<std::size_t>(mp.trigger_height * mp.trigger_width), mp.trigger_value)};
        SeedStream sel(seed, Stream::Manipulation);
        if (mp.enabled) train = poison_backdoor(clean, *trigger, mp.target_label, mp.fraction, mp.epsilon, sel);
        else trigger->check(clean.dim());
        break;
      }
      case Scenario::DistributionMatch: break;
      }
    });
    const auto flagged = static_cast<double>(std::count(train.manipulated.begin(), train.manipulated.end(), 1));
    M["manipulated_count"] = flagged;

    // detection
    Detection det = detail::stage("detect", [&] {
      const auto &spec = cfg.detector.spec;
      if (spec.kind == DetectorKind::KnnKappa) return knn_kappa_detect(train, g, spec.k, spec.kappa);
      const double rate = cfg.detector.auto_rate ? flagged / static_cast<double>(train.size()) : spec.manip_rate;
      SeedStream rng(seed, Stream::DetectorSampling);
      return simulated_detect(train, spec.q, spec.r, rate, rng);
    });
    rec.reference = det.reference;
    rec.warnings = det.warnings;
    const auto untrusted_idx = complement(det.reference, train.size());
    const Dataset rf = train.subset(det.reference);
    const Dataset ut = train.subset(untrusted_idx);
    M["reference_size"] = static_cast<double>(rf.size());
    M["reference_manipulated"] = static_cast<double>(std::count(rf.manipulated.begin(), rf.manipulated.end(), 1));
    M["untrusted_size"] = static_cast<double>(ut.size());

    // purification or baseline
    Dataset pe = ut;
    detail::stage("purify", [&] {
      if (cfg.purify && ut.size() > 0 && rf.size() > 0) {
        const auto res = purify(ut, rf, g, cfg.purifier, seed);
        pe = res.purified;
        M["purify_rounds"] = static_cast<double>(res.state.round);
        M["final_objective"] = res.state.objective_history.empty() ? 0.0 : res.state.objective_history.back();
      } else if (cfg.purify) {
        rec.warnings.push_back("purification skipped: empty reference or untrusted set");
      } else if (cfg.baseline.kind == BaselineKind::RandomNoise) {
        SeedStream rng(seed, Stream::Baseline);
        pe = random_noise_purify(ut, cfg.baseline.sigma, rng);
      }
      const RowMatrix delta = inputs_as_double(pe) - inputs_as_double(ut);
      M["mean_delta_l2"] = mean_row_l2(delta);
      M["max_delta_linf"] = max_abs(delta);
      if (ut.size() > 0 && rf.size() > 0) {
        SeedStream rng(seed, Stream::Evaluation);
        const auto w = detail::paired_w1(g.extract_rows(ut), g.extract_rows(pe), g.extract_rows(rf), cfg.w1_cap, rng);
        M["w1_before"] = w.before;
        M["w1_after"] = w.after;
      }
    });

    // D_pf: reference rows untouched, untrusted rows replaced, original order kept.
    Dataset pf = train;
    for (std::size_t k = 0; k < untrusted_idx.size(); ++k) pf.inputs.row(untrusted_idx[k]) = pe.inputs.row(static_cast<Index>(k));
    M["purified_size"] = static_cast<double>(pf.size());
    if (cfg.scenario == Scenario::DistributionMatch) {
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return rec;
    }

    const LinearProbe probe = detail::stage("train", [&] {
      SeedStream rng(seed, Stream::ProbeTraining);
      return train_probe(pf, g, cfg.probe, rng);
    });

    detail::stage("evaluate", [&] {
      if (split.test.size() > 0) M["accuracy"] = accuracy(probe, g, split.test);
      switch (cfg.scenario) {
      case Scenario::PoisonTargeted:
        M["asr_hit"] = asr_targeted(probe, g, targets).hits;
        break;
      case Scenario::PoisonBackdoor:
        if (split.test.size() > 0) M["asr_backdoor"] = asr_backdoor(probe, g, split.test, *trigger, mp.target_label).value();
        break;
      case Scenario::Tracing: {
        rec.detection = detect_marks(probe.weight, *marks, cfg.combine);
        M["detection_p"] = rec.detection->combined;
        M["flagged"] = rec.detection->flagged ? 1.0 : 0.0;
        double cs = 0.0;
        for (double c : rec.detection->cosines) cs += c;
        M["mean_cosine"] = cs / static_cast<double>(rec.detection->cosines.size());
        break;
      }
      case Scenario::DistributionMatch: break;
      }
    });
  } catch (const detail::StageError &e) {
    rec.ok = false;
    rec.stage = e.stage;
    rec.error = e.message;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0; // sample standard deviation (n - 1); 0 for a single trial
  std::size_t count = 0;
  double sum = 0.0; // count metrics: number of hits
};

inline std::map<std::string, MetricSummary> summarize(std::span<const TrialRecord> trials) {
  std::map<std::string, std::vector<double>> values;
  for (const auto &t : trials)
    if (t.ok)
      for (const auto &[k, v] : t.metrics) values[k].push_back(v);
  std::map<std::string, MetricSummary> out;
  for (const auto &[k, vs] : values) {
    MetricSummary s;
    s.count = vs.size();
    for (double v : vs) s.sum += v;
    s.mean = s.sum / static_cast<double>(s.count);
    if (s.count > 1) {
      double ss = 0.0;
      for (double v : vs) ss += (v - s.mean) * (v - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
    }
    out[k] = s;
  }
  return out;
}

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<TrialRecord> trials; // sorted by index
  std::map<std::string, MetricSummary> aggregate;

  std::size_t failed() const {
    return static_cast<std::size_t>(std::count_if(trials.begin(), trials.end(), [](const auto &t) { return !t.ok; }));
  }
};

/// Number of worker threads from WPURE_WORKERS (default 1).
inline unsigned workers_from_env() {
  if (const char *v = std::getenv("WPURE_WORKERS")) {
    unsigned n = 0;
    const auto *end = v + std::strlen(v);
    if (std::from_chars(v, end, n).ptr == end && n >= 1) return n;
  }
  return 1;
}

/// Runs every trial, in parallel when `workers` > 1. Output does not depend on
/// the worker count.
inline ExperimentReport run_experiment(const ExperimentConfig &cfg, unsigned workers = 1) {
  ExperimentReport rep;
  rep.config = cfg;
  rep.trials.resize(static_cast<std::size_t>(cfg.trials));
  std::atomic<Index> next{0};
  const auto work = [&] {
    for (Index i = next++; i < cfg.trials; i = next++) rep.trials[static_cast<std::size_t>(i)] = run_trial(cfg, i);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(cfg.trials)));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(work);
  }
  rep.aggregate = summarize(rep.trials);
  return rep;
}

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

} // namespace detail

inline json trial_json(const TrialRecord &t) {
  json j;
  j["index"] = t.index;
  j["seed"] = t.seed;
  j["status"] = t.ok ? "ok" : "error";
  if (!t.ok) {
    j["stage"] = t.stage;
    j["error"] = t.error;
  }
  j["metrics"] = json::object();
  for (const auto &[k, v] : t.metrics) j["metrics"][k] = v;
  j["reference"] = t.reference;
  if (t.detection) {
    j["detection"] = {{"cosines", t.detection->cosines},
                      {"pvalues", t.detection->pvalues},
                      {"combined_p", t.detection->combined},
                      {"flagged", t.detection->flagged}};
  }
  if (!t.warnings.empty()) j["warnings"] = t.warnings;
  return j;
}

inline json report_json(const ExperimentReport &r) {
  json j;
  j["config"] = to_json(r.config);
  j["trials"] = json::array();
  for (const auto &t : r.trials) j["trials"].push_back(trial_json(t));
  j["failed_trials"] = r.failed();
  json agg = json::object();
  for (const auto &[k, s] : r.aggregate) {
    agg[k] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
    if (is_count_metric(k)) agg[k]["hits"] = detail::shortest(s.sum) + "/" + std::to_string(s.count);
  }
  j["aggregate"] = agg;
  return j;
}

/// One row per trial; metric columns are the sorted union of metric names.
inline std::string trials_csv(const ExperimentReport &r) {
  std::set<std::string> keys;
  for (const auto &t : r.trials)
    for (const auto &[k, v] : t.metrics) keys.insert(k);
  std::string out = "trial,seed,status,stage";
  for (const auto &k : keys) out += "," + k;
  out += "\n";
  for (const auto &t : r.trials) {
    out += std::to_string(t.index) + "," + std::to_string(t.seed) + "," + (t.ok ? "ok" : "error") + "," + detail::csv_field(t.stage);
    for (const auto &k : keys) {
      const auto it = t.metrics.find(k);
      out += "," + (it == t.metrics.end() ? std::string() : detail::shortest(it->second));
    }
    out += "\n";
  }
  return out;
}

/// Table-style rows: metric, mean, std, count, and "hits/trials" for 0/1 metrics.
inline std::string summary_csv(const ExperimentReport &r) {
  std::string out = "metric,mean,std,count,hits\n";
  for (const auto &[k, s] : r.aggregate) {
    out += k + "," + detail::shortest(s.mean) + "," + detail::shortest(s.std) + "," + std::to_string(s.count) + ",";
    if (is_count_metric(k)) out += detail::shortest(s.sum) + "/" + std::to_string(s.count);
    out += "\n";
  }
  return out;
}

/// Writes report.json, trials.csv and summary.csv atomically, plus timings.json
/// (wall-clock seconds per trial, the only non-deterministic output).
inline void write_report(const ExperimentReport &r, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  binio::write_file_atomic(dir / "report.json", report_json(r).dump(2) + "\n");
  binio::write_file_atomic(dir / "trials.csv", trials_csv(r));
  binio::write_file_atomic(dir / "summary.csv", summary_csv(r));
  json timings = json::array();
  for (const auto &t : r.trials) timings.push_back({{"index", t.index}, {"wall_seconds", t.wall_seconds}});
  binio::write_file_atomic(dir / "timings.json", timings.dump(2) + "\n");
}

} // namespace wpure

#endif // WPURE_EXPERIMENT_HPP
