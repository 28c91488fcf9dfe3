#pragma once

// Evaluation reports, the uncertainty-driven importance-sampling experiment
// and the density/uncertainty relationship check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evtraj/aggregate.hpp"
#include "evtraj/config.hpp"
#include "evtraj/errors.hpp"
#include "evtraj/metrics.hpp"
#include "evtraj/predictor.hpp"
#include "evtraj/synthgen.hpp"

namespace evtraj {

/// Environment variable that overrides every seed in a run.
inline constexpr const char* kSeedEnvVar = "EVTRAJ_SEED";

inline std::optional<std::uint64_t> seed_override() {
  const char* v = std::getenv(kSeedEnvVar);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string(kSeedEnvVar) + " must be an unsigned integer");
  return static_cast<std::uint64_t>(s);
}

// ---------------------------------------------------------------------------
// Evaluation

/// What the evaluator needs from a predictor for one record.
struct ScoredPrediction {
  std::vector<Trajectory> modes;      ///< world-frame mean trajectories
  std::vector<double> probabilities;  ///< sums to 1
  double uncertainty = 0.0;           ///< agent-level
};

using PredictorFn = std::function<ScoredPrediction(const TrajectoryRecord&)>;

/// Wraps a model; reads only the record's history.
inline PredictorFn model_predictor(const Model& model, UncertaintyComponent component = UncertaintyComponent::kTotal) {
  return [&model, component](const TrajectoryRecord& r) {
    const Prediction p = model.predict(r.history, component);
    ScoredPrediction s;
    s.modes.reserve(p.world.modes());
    for (std::size_t k = 0; k < p.world.modes(); ++k) s.modes.push_back(p.world.mean_trajectory(k));
    s.probabilities = dirichlet_stats(p.world.evidence()).probabilities;
    s.uncertainty = p.report.agent;
    return s;
  };
}

enum class ErrorChannel { kMinAde, kWAde };

inline ErrorChannel parse_error_channel(const std::string& s) {
  if (s == "minade") return ErrorChannel::kMinAde;
  if (s == "wade") return ErrorChannel::kWAde;
  throw ConfigError("error channel must be minade or wade, got '" + s + "'");
}

struct EvalOptions {
  double miss_threshold = kDefaultMissThreshold;
  std::size_t ece_bins = 10;
  /// Channel exported as the rejection curve.
  ErrorChannel curve_channel = ErrorChannel::kMinAde;
};

struct MetricsReport {
  double min_ade = 0.0;
  double w_ade = 0.0;
  double min_fde = 0.0;
  double w_fde = 0.0;
  double miss_rate = 0.0;
  double min_ade_rauc = 0.0;
  double w_ade_rauc = 0.0;
  double ece = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"min_ade", r.min_ade},       {"w_ade", r.w_ade},   {"min_fde", r.min_fde},
          {"w_fde", r.w_fde},           {"miss_rate", r.miss_rate}, {"min_ade_rauc", r.min_ade_rauc},
          {"w_ade_rauc", r.w_ade_rauc}, {"ece", r.ece},       {"samples", r.samples},
          {"seed", r.seed},             {"config", r.config}};
}

struct Evaluation {
  MetricsReport report;
  std::vector<RejectionPoint> curve;
  std::vector<double> min_ade;
  std::vector<double> w_ade;
  std::vector<double> uncertainty;
};

inline Evaluation evaluate_records(const PredictorFn& predictor, std::span<const TrajectoryRecord> records,
                                   const EvalOptions& options = {}) {
  if (records.size() < 2) throw DataError("evaluation needs at least two records");
  Evaluation ev;
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> correct;
  double min_fde = 0.0, w_fde = 0.0;
  std::size_t misses = 0;
  for (const auto& r : records) {
    const ScoredPrediction p = predictor(r);
    const auto d = displacement(p.modes, p.probabilities, r.future, options.miss_threshold);
    ev.min_ade.push_back(d.min_ade);
    ev.w_ade.push_back(d.w_ade);
    ev.uncertainty.push_back(p.uncertainty);
    min_fde += d.min_fde;
    w_fde += d.w_fde;
    misses += d.miss ? 1 : 0;
    probs.push_back(p.probabilities);
    correct.push_back(d.best_mode);
  }
  const double n = static_cast<double>(records.size());
  MetricsReport& m = ev.report;
  m.samples = records.size();
  m.min_ade = std::accumulate(ev.min_ade.begin(), ev.min_ade.end(), 0.0) / n;
  m.w_ade = std::accumulate(ev.w_ade.begin(), ev.w_ade.end(), 0.0) / n;
  m.min_fde = min_fde / n;
  m.w_fde = w_fde / n;
  m.miss_rate = static_cast<double>(misses) / n;
  m.min_ade_rauc = rauc(ev.min_ade, ev.uncertainty);
  m.w_ade_rauc = rauc(ev.w_ade, ev.uncertainty);
  m.ece = ece(probs, correct, options.ece_bins);
  ev.curve = rejection_curve(options.curve_channel == ErrorChannel::kMinAde ? ev.min_ade : ev.w_ade, ev.uncertainty);
  return ev;
}

inline void write_curve_csv(std::span<const RejectionPoint> curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "rejection_fraction,retained_mean_error\n" << std::setprecision(17);
  for (const auto& p : curve) out << p.rejection_fraction << ',' << p.retained_mean_error << '\n';
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

inline std::vector<TrajectoryRecord> eval_split(std::span<const TrajectoryRecord> records) {
  auto out = filter_split(records, Split::kTest);
  if (out.empty()) throw DataError("dataset has no test split records");
  return out;
}

/// Evaluates a checkpoint on the test split; writes report.json and rejection_curve.csv into out_dir.
inline MetricsReport evaluate(const std::string& model_path, const std::string& dataset_path, const std::string& out_dir,
                              const EvalOptions& options = {},
                              UncertaintyComponent component = UncertaintyComponent::kTotal) {
  const Model model(load_checkpoint(model_path));
  const auto records = read_dataset(dataset_path);
  const auto test = eval_split(records);
  Evaluation ev = evaluate_records(model_predictor(model, component), test, options);
  ev.report.config = {{"model", model_path},
                      {"data", dataset_path},
                      {"miss_threshold", options.miss_threshold},
                      {"ece_bins", options.ece_bins},
                      {"rauc_error", options.curve_channel == ErrorChannel::kMinAde ? "minade" : "wade"}};
  std::filesystem::create_directories(out_dir);
  write_json(to_json(ev.report), (std::filesystem::path(out_dir) / "report.json").string());
  write_curve_csv(ev.curve, (std::filesystem::path(out_dir) / "rejection_curve.csv").string());
  return ev.report;
}

// ---------------------------------------------------------------------------
// Candidate access for selection scoring

/// Read access to candidate records. Selection scorers go through this so
/// ground-truth reads can be observed.
class RecordAccess {
 public:
  virtual ~RecordAccess() = default;
  virtual std::size_t size() const = 0;
  virtual const Trajectory& history(std::size_t i) const = 0;
  virtual const Trajectory& future(std::size_t i) const = 0;
};

class SpanRecordAccess : public RecordAccess {
 public:
  explicit SpanRecordAccess(std::span<const TrajectoryRecord> records) : records_(records) {}
  std::size_t size() const override { return records_.size(); }
  const Trajectory& history(std::size_t i) const override { return records_[i].history; }
  const Trajectory& future(std::size_t i) const override { return records_[i].future; }

 private:
  std::span<const TrajectoryRecord> records_;
};

/// Counts ground-truth future reads made through it.
class TrackingRecordAccess : public RecordAccess {
 public:
  explicit TrackingRecordAccess(const RecordAccess& inner) : inner_(inner) {}
  std::size_t size() const override { return inner_.size(); }
  const Trajectory& history(std::size_t i) const override {
    ++history_reads_;
    return inner_.history(i);
  }
  const Trajectory& future(std::size_t i) const override {
    ++future_reads_;
    return inner_.future(i);
  }
  std::size_t history_reads() const { return history_reads_; }
  std::size_t future_reads() const { return future_reads_; }

 private:
  const RecordAccess& inner_;
  mutable std::size_t history_reads_ = 0;
  mutable std::size_t future_reads_ = 0;
};

/// Agent-level predicted uncertainty per candidate; reads histories only.
inline std::vector<double> score_by_uncertainty(const Model& model, const RecordAccess& pool,
                                                UncertaintyComponent component = UncertaintyComponent::kTotal) {
  std::vector<double> out(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) out[i] = model.predict(pool.history(i), component).report.agent;
  return out;
}

/// Per-candidate minADE against ground truth (the oracle selector).
inline std::vector<double> score_by_error(const Model& model, const RecordAccess& pool) {
  std::vector<double> out(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Prediction p = model.predict(pool.history(i));
    std::vector<Trajectory> modes;
    for (std::size_t k = 0; k < p.world.modes(); ++k) modes.push_back(p.world.mean_trajectory(k));
    const auto probs = dirichlet_stats(p.world.evidence()).probabilities;
    out[i] = displacement(modes, probs, pool.future(i)).min_ade;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Importance-sampling experiment

enum class Selection { kRandom, kError, kUncertainty };
inline constexpr std::array<Selection, 3> kAllSelections = {Selection::kRandom, Selection::kError,
                                                            Selection::kUncertainty};

inline std::string to_string(Selection s) {
  switch (s) {
    case Selection::kRandom: return "random";
    case Selection::kError: return "error";
    case Selection::kUncertainty: return "uncertainty";
  }
  return "?";
}

inline Selection parse_selection(const std::string& s) {
  for (Selection v : kAllSelections)
    if (to_string(v) == s) return v;
  throw ConfigError("selection must be random, error or uncertainty, got '" + s + "'");
}

struct ExperimentConfig {
  std::string dataset;
  /// Share of the training pool used for the base model; must match the train_a split.
  double initial_fraction = 0.5;
  /// Share of the training pool added from train_b.
  double added_fraction = 0.25;
  std::vector<Selection> selections{kAllSelections.begin(), kAllSelections.end()};
  std::size_t base_epochs = 60;
  std::size_t retrain_epochs = 40;
  std::vector<std::uint64_t> seeds{0};
  UncertaintyComponent selection_component = UncertaintyComponent::kTotal;
  std::vector<Maneuver> rare_maneuvers{Maneuver::kUTurn, Maneuver::kStop};
  EvalOptions eval;
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    if (!(initial_fraction > 0.0 && initial_fraction <= 1.0)) throw ConfigError("initial_fraction must lie in (0, 1]");
    if (!(added_fraction >= 0.0 && added_fraction <= 1.0)) throw ConfigError("added_fraction must lie in [0, 1]");
    if (initial_fraction + added_fraction > 1.0 + 1e-12) throw ConfigError("initial_fraction + added_fraction must be <= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (selections.empty()) throw ConfigError("at least one selection is required");
  }

  static ExperimentConfig from(const KeyValueConfig& kv) {
    ExperimentConfig c;
    c.dataset = kv.get_string("dataset", c.dataset);
    c.initial_fraction = kv.get_double("initial_fraction", c.initial_fraction);
    c.added_fraction = kv.get_double("added_fraction", c.added_fraction);
    const std::string sel = kv.get_string("selection", "all");
    if (sel != "all") {
      c.selections.clear();
      std::stringstream in(sel);
      std::string item;
      while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) c.selections.push_back(parse_selection(item));
      }
    }
    c.base_epochs = kv.get_uint("base_epochs", c.base_epochs);
    c.retrain_epochs = kv.get_uint("retrain_epochs", c.retrain_epochs);
    const auto seeds = kv.get_ints("seeds", {});
    if (!seeds.empty()) {
      c.seeds.clear();
      for (auto s : seeds) {
        if (s < 0) throw ConfigError("seeds must be non-negative");
        c.seeds.push_back(static_cast<std::uint64_t>(s));
      }
    }
    c.selection_component =
        kv.get_bool("epistemic_only", false) ? UncertaintyComponent::kEpistemic : UncertaintyComponent::kTotal;
    c.eval.miss_threshold = kv.get_double("miss_threshold", c.eval.miss_threshold);
    c.eval.ece_bins = kv.get_uint("ece_bins", c.eval.ece_bins);
    c.model = ModelConfig::from(kv);
    c.train = TrainConfig::from(kv);
    if (auto s = seed_override()) c.seeds = {*s};
    c.validate();
    return c;
  }
};

struct SelectionOutcome {
  Selection selection = Selection::kRandom;
  MetricsReport metrics;
  std::vector<std::size_t> selected;  ///< indices into the train_b candidates
  double rare_fraction = 0.0;         ///< share of rare maneuvers among the selected
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricsReport base;
  std::vector<SelectionOutcome> selections;
  MetricsReport full;
  /// The full-data reference model, kept for follow-up analyses.
  ModelParams full_params;
  double candidate_rare_fraction = 0.0;
  std::size_t uncertainty_future_reads = 0;
};

struct ExperimentResult {
  std::vector<SeedOutcome> seeds;
  std::vector<std::string> row_names;  ///< Base, Random 75%, ..., Full training
};

namespace detail {

inline double rare_share(std::span<const TrajectoryRecord> pool, std::span<const std::size_t> idx,
                         std::span<const Maneuver> rare) {
  if (idx.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : idx)
    if (std::find(rare.begin(), rare.end(), pool[i].maneuver) != rare.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

inline std::string percent(double f) {
  std::ostringstream s;
  s << std::llround(100.0 * f) << '%';
  return s.str();
}

}  // namespace detail

using ProgressFn = std::function<void(const std::string&)>;

inline ExperimentResult importance_sampling_experiment(std::span<const TrajectoryRecord> records,
                                                       const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  auto log = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const auto train_a = filter_split(records, Split::kTrainA);
  const auto train_b = filter_split(records, Split::kTrainB);
  const auto val = filter_split(records, Split::kVal);
  const auto test = eval_split(records);
  const std::size_t pool = train_a.size() + train_b.size();
  if (train_a.empty() || pool == 0) throw DataError("importance sampling needs a non-empty train_a split");
  const double share_a = static_cast<double>(train_a.size()) / static_cast<double>(pool);
  if (std::abs(share_a - cfg.initial_fraction) > 0.01 + 1.0 / static_cast<double>(pool))
    throw DataError("train_a holds " + std::to_string(share_a) + " of the training pool, initial_fraction is " +
                    std::to_string(cfg.initial_fraction));
  const auto to_add = static_cast<std::size_t>(std::llround(cfg.added_fraction * static_cast<double>(pool)));
  if (to_add > train_b.size())
    throw DataError("train_b has " + std::to_string(train_b.size()) + " records, " + std::to_string(to_add) +
                    " requested");

  const auto samples_a = make_samples(train_a, cfg.model);
  const auto samples_b = make_samples(train_b, cfg.model);
  const auto samples_val = make_samples(val, cfg.model);
  const SpanRecordAccess candidates(train_b);

  ExperimentResult result;
  const std::string added = detail::percent(cfg.initial_fraction + cfg.added_fraction);
  result.row_names.push_back("Base");
  for (Selection s : cfg.selections) {
    std::string name = to_string(s);
    name[0] = static_cast<char>(std::toupper(name[0]));
    result.row_names.push_back(name + " " + added);
  }
  result.row_names.push_back("Full training");

  for (std::uint64_t seed : cfg.seeds) {
    SeedOutcome out;
    out.seed = seed;
    ModelConfig mc = cfg.model;
    mc.init_seed = seed;
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const ModelParams init = init_params(mc);

    tc.epochs = cfg.base_epochs;
    log("seed " + std::to_string(seed) + ": training base model on " + std::to_string(samples_a.size()) + " records");
    const TrainResult base = train(init, samples_a, samples_val, tc);
    const Model base_model(base.params);
    auto evaluate_params = [&](const ModelParams& p) {
      const Model m(p);
      MetricsReport r = evaluate_records(model_predictor(m), test, cfg.eval).report;
      r.seed = seed;
      return r;
    };
    out.base = evaluate_params(base.params);

    std::vector<std::size_t> all_b(train_b.size());
    std::iota(all_b.begin(), all_b.end(), std::size_t{0});
    out.candidate_rare_fraction = detail::rare_share(train_b, all_b, cfg.rare_maneuvers);

    for (Selection s : cfg.selections) {
      SelectionOutcome so;
      so.selection = s;
      if (to_add == 0) {
        so.metrics = out.base;
        out.selections.push_back(so);
        continue;
      }
      std::vector<double> scores;
      if (s == Selection::kUncertainty) {
        const TrackingRecordAccess tracked(candidates);
        scores = score_by_uncertainty(base_model, tracked, cfg.selection_component);
        out.uncertainty_future_reads = tracked.future_reads();
        if (tracked.future_reads() != 0) throw std::logic_error("uncertainty selector read ground truth");
      } else if (s == Selection::kError) {
        scores = score_by_error(base_model, candidates);
      }
      const double fraction = static_cast<double>(to_add) / static_cast<double>(train_b.size());
      so.selected = subsample_indices(train_b, fraction, s == Selection::kRandom ? Selector::kRandom : Selector::kByScore,
                                      seed, scores);
      so.rare_fraction = detail::rare_share(train_b, so.selected, cfg.rare_maneuvers);

      std::vector<Sample> augmented = samples_a;
      for (std::size_t i : so.selected) augmented.push_back(samples_b[i]);
      TrainConfig rc = tc;
      rc.epochs = cfg.retrain_epochs;
      rc.start_epoch = base.history.size();
      log("seed " + std::to_string(seed) + ": retraining with " + to_string(s) + " selection (" +
          std::to_string(augmented.size()) + " records)");
      const TrainResult retrained = train(base.params, augmented, samples_val, rc);
      so.metrics = evaluate_params(retrained.params);
      out.selections.push_back(std::move(so));
    }

    std::vector<Sample> everything = samples_a;
    everything.insert(everything.end(), samples_b.begin(), samples_b.end());
    log("seed " + std::to_string(seed) + ": training full-data reference on " + std::to_string(everything.size()) +
        " records");
    const TrainResult full = train(init, everything, samples_val, tc);
    out.full = evaluate_params(full.params);
    out.full_params = full.params;
    result.seeds.push_back(std::move(out));
  }
  return result;
}

inline std::vector<const MetricsReport*> rows_of(const SeedOutcome& s) {
  std::vector<const MetricsReport*> rows{&s.base};
  for (const auto& sel : s.selections) rows.push_back(&sel.metrics);
  rows.push_back(&s.full);
  return rows;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

inline const std::array<std::pair<const char*, double MetricsReport::*>, 8>& table_columns() {
  static const std::array<std::pair<const char*, double MetricsReport::*>, 8> cols = {{
      {"minADE", &MetricsReport::min_ade},
      {"wADE", &MetricsReport::w_ade},
      {"minFDE", &MetricsReport::min_fde},
      {"wFDE", &MetricsReport::w_fde},
      {"MR", &MetricsReport::miss_rate},
      {"minADE R-AUC", &MetricsReport::min_ade_rauc},
      {"wADE R-AUC", &MetricsReport::w_ade_rauc},
      {"ECE", &MetricsReport::ece},
  }};
  return cols;
}

inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["rows"] = r.row_names;
  auto seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) {
    nlohmann::json js;
    js["seed"] = s.seed;
    js["candidate_rare_fraction"] = s.candidate_rare_fraction;
    js["uncertainty_future_reads"] = s.uncertainty_future_reads;
    const auto rows = rows_of(s);
    for (std::size_t i = 0; i < rows.size(); ++i) js["metrics"][r.row_names[i]] = to_json(*rows[i]);
    for (const auto& sel : s.selections) {
      js["selections"][to_string(sel.selection)] = {{"rare_fraction", sel.rare_fraction},
                                                    {"selected", sel.selected.size()}};
    }
    seeds.push_back(js);
  }
  j["seeds"] = seeds;
  nlohmann::json summary;
  for (std::size_t i = 0; i < r.row_names.size(); ++i) {
    for (const auto& [name, member] : table_columns()) {
      std::vector<double> v;
      for (const auto& s : r.seeds) v.push_back(rows_of(s)[i]->*member);
      const MeanStd m = mean_std(v);
      summary[r.row_names[i]][name] = {{"mean", m.mean}, {"stddev", m.stddev}};
    }
  }
  j["summary"] = summary;
  return j;
}

/// Aligned plain-text table, one row per configuration, mean ± stddev over seeds.
inline std::string format_table(const ExperimentResult& r) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Model"};
  for (const auto& [name, member] : table_columns()) header.push_back(name);
  cells.push_back(header);
  for (std::size_t i = 0; i < r.row_names.size(); ++i) {
    std::vector<std::string> row{r.row_names[i]};
    for (const auto& [name, member] : table_columns()) {
      std::vector<double> v;
      for (const auto& s : r.seeds) v.push_back(rows_of(s)[i]->*member);
      const MeanStd m = mean_std(v);
      std::ostringstream c;
      c << std::fixed << std::setprecision(3) << m.mean;
      if (r.seeds.size() > 1) c << " ± " << std::setprecision(3) << m.stddev;
      row.push_back(c.str());
    }
    cells.push_back(row);
  }
  // Widths in code points; "±" is two bytes in UTF-8.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& s = cells[i][c];
      out << (c ? " | " : "") << s << std::string(widths[c] - width(s), ' ');
    }
    out << '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < widths.size(); ++c) out << (c ? "-+-" : "") << std::string(widths[c], '-');
      out << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Density / uncertainty relationship

struct ManeuverUncertainty {
  Maneuver maneuver = Maneuver::kStraight;
  double training_frequency = 0.0;
  double mean_uncertainty = 0.0;
  std::size_t count = 0;
};

struct DensityCheck {
  /// Spearman over evaluated records: label frequency vs agent uncertainty.
  std::optional<double> record_spearman;
  /// Spearman over maneuvers present in the evaluation set: frequency vs mean uncertainty.
  std::optional<double> maneuver_spearman;
  bool undefined = false;  ///< no density variation among evaluated records
  std::vector<ManeuverUncertainty> per_maneuver;
};

/// Densities come from the train_a + train_b label frequencies; uncertainties from the test split.
inline DensityCheck density_uncertainty_check(const Model& model, std::span<const TrajectoryRecord> records,
                                              UncertaintyComponent component = UncertaintyComponent::kTotal) {
  std::array<std::size_t, kManeuverCount> train_counts{};
  std::size_t train_total = 0;
  for (const auto& r : records)
    if (r.in_training()) {
      ++train_counts[static_cast<std::size_t>(r.maneuver)];
      ++train_total;
    }
  if (train_total == 0) throw DataError("density check needs training-split labels");
  const auto test = eval_split(records);

  std::vector<double> density, uncertainty;
  std::array<double, kManeuverCount> sums{};
  std::array<std::size_t, kManeuverCount> counts{};
  for (const auto& r : test) {
    const auto m = static_cast<std::size_t>(r.maneuver);
    const double u = model.predict(r.history, component).report.agent;
    density.push_back(static_cast<double>(train_counts[m]) / static_cast<double>(train_total));
    uncertainty.push_back(u);
    sums[m] += u;
    ++counts[m];
  }
  DensityCheck out;
  std::vector<double> freq, mean_u;
  for (Maneuver m : kAllManeuvers) {
    const auto i = static_cast<std::size_t>(m);
    ManeuverUncertainty mu{m, static_cast<double>(train_counts[i]) / static_cast<double>(train_total),
                           counts[i] ? sums[i] / static_cast<double>(counts[i]) : 0.0, counts[i]};
    out.per_maneuver.push_back(mu);
    if (counts[i]) {
      freq.push_back(mu.training_frequency);
      mean_u.push_back(mu.mean_uncertainty);
    }
  }
  out.record_spearman = spearman(density, uncertainty);
  out.maneuver_spearman = spearman(freq, mean_u);
  out.undefined = !out.record_spearman.has_value();
  return out;
}

inline nlohmann::json to_json(const DensityCheck& d) {
  nlohmann::json j;
  j["undefined"] = d.undefined;
  j["record_spearman"] = d.record_spearman ? nlohmann::json(*d.record_spearman) : nlohmann::json(nullptr);
  j["maneuver_spearman"] = d.maneuver_spearman ? nlohmann::json(*d.maneuver_spearman) : nlohmann::json(nullptr);
  for (const auto& m : d.per_maneuver)
    j["per_maneuver"].push_back({{"maneuver", to_string(m.maneuver)},
                                 {"training_frequency", m.training_frequency},
                                 {"mean_uncertainty", m.mean_uncertainty},
                                 {"count", m.count}});
  return j;
}

}  // namespace evtraj
