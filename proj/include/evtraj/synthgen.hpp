#pragma once

// Synthetic multi-modal driving scenarios and their JSON-lines file format.
//
// Each agent drives straight at constant speed until a maneuver onset that
// falls inside the last `onset_lead` seconds of the observed history. From
// the onset the kinematic template takes over:
//   straight  keep heading
//   left      sweep +90 deg at constant speed over the future horizon duration
//   right     sweep -90 deg
//   u_turn    sweep 180 deg
//   stop      decelerate uniformly to rest over the future horizon duration
// and holds its final heading (or rest) afterwards. Gaussian noise of scale
// noise_sigma is added independently to every coordinate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evtraj/config.hpp"
#include "evtraj/errors.hpp"
#include "evtraj/scene.hpp"

namespace evtraj {

enum class Maneuver : std::uint8_t { kStraight = 0, kLeft, kRight, kUTurn, kStop };
inline constexpr std::size_t kManeuverCount = 5;
inline constexpr std::array<Maneuver, kManeuverCount> kAllManeuvers = {
    Maneuver::kStraight, Maneuver::kLeft, Maneuver::kRight, Maneuver::kUTurn, Maneuver::kStop};

enum class Split : std::uint8_t { kTrainA = 0, kTrainB, kVal, kTest };
inline constexpr std::size_t kSplitCount = 4;

inline std::string to_string(Maneuver m) {
  switch (m) {
    case Maneuver::kStraight: return "straight";
    case Maneuver::kLeft: return "left";
    case Maneuver::kRight: return "right";
    case Maneuver::kUTurn: return "u_turn";
    case Maneuver::kStop: return "stop";
  }
  return "?";
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrainA: return "train_a";
    case Split::kTrainB: return "train_b";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline bool parse_maneuver(const std::string& s, Maneuver& out) {
  for (Maneuver m : kAllManeuvers)
    if (to_string(m) == s) return out = m, true;
  return false;
}

inline bool parse_split(const std::string& s, Split& out) {
  for (std::size_t i = 0; i < kSplitCount; ++i)
    if (to_string(static_cast<Split>(i)) == s) return out = static_cast<Split>(i), true;
  return false;
}

struct TrajectoryRecord {
  std::string scene_id;
  Trajectory history;
  Trajectory future;
  Maneuver maneuver = Maneuver::kStraight;
  double speed = 0.0;
  double noise_sigma = 0.0;
  Split split = Split::kTrainA;

  bool in_training() const { return split == Split::kTrainA || split == Split::kTrainB; }
};

struct GeneratorConfig {
  std::size_t n_scenes = 1000;
  std::array<double, kManeuverCount> maneuver_weights = {0.80, 0.09, 0.09, 0.01, 0.01};
  double speed_min = 2.0;
  double speed_max = 15.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  std::size_t history_steps = 20;
  std::size_t future_steps = 30;
  double dt = 0.1;
  /// The maneuver starts uniformly within this many seconds before the present.
  double onset_lead = 1.0;
  /// train_a, train_b, val, test.
  std::array<double, kSplitCount> split_fractions = {0.35, 0.35, 0.15, 0.15};
  /// Half width (m) of the square, centred on the origin, holding onset positions.
  double position_extent = 50.0;

  void validate() const {
    if (std::all_of(maneuver_weights.begin(), maneuver_weights.end(), [](double w) { return w == 0.0; }))
      throw ConfigError("maneuver weights must not all be zero");
    for (double w : maneuver_weights)
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("maneuver weights must be finite and >= 0");
    if (!(speed_min >= 0.0) || !(speed_max >= speed_min)) throw ConfigError("need 0 <= speed_min <= speed_max");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (history_steps < 2) throw ConfigError("history_steps must be >= 2");
    if (future_steps < 1) throw ConfigError("future_steps must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
    if (!(onset_lead >= 0.0) || onset_lead > dt * static_cast<double>(history_steps - 1))
      throw ConfigError("onset_lead must lie within the observed history");
    double total = 0.0;
    for (double f : split_fractions) {
      if (!(f >= 0.0)) throw ConfigError("split fractions must be >= 0");
      total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  }

  static GeneratorConfig from(const KeyValueConfig& kv) {
    GeneratorConfig c;
    c.n_scenes = kv.get_uint("n_scenes", c.n_scenes);
    const auto w = kv.get_doubles("maneuver_weights", {c.maneuver_weights.begin(), c.maneuver_weights.end()});
    if (w.size() != kManeuverCount) throw ConfigError("maneuver_weights needs 5 values");
    std::copy(w.begin(), w.end(), c.maneuver_weights.begin());
    c.speed_min = kv.get_double("speed_min", c.speed_min);
    c.speed_max = kv.get_double("speed_max", c.speed_max);
    c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
    c.seed = kv.get_uint("seed", c.seed);
    c.history_steps = kv.get_uint("history_steps", c.history_steps);
    c.future_steps = kv.get_uint("future_steps", c.future_steps);
    c.dt = kv.get_double("dt", c.dt);
    c.onset_lead = kv.get_double("onset_lead", c.onset_lead);
    const auto s = kv.get_doubles("split_fractions", {c.split_fractions.begin(), c.split_fractions.end()});
    if (s.size() != kSplitCount) throw ConfigError("split_fractions needs 4 values");
    std::copy(s.begin(), s.end(), c.split_fractions.begin());
    c.position_extent = kv.get_double("position_extent", c.position_extent);
    c.validate();
    return c;
  }
};

/// Noise-free kinematic template.
struct ManeuverTemplate {
  Maneuver maneuver = Maneuver::kStraight;
  double speed = 0.0;
  Vec2 onset_position;
  double onset_heading = 0.0;
  double onset_time = 0.0;
  /// Duration of the heading sweep or the deceleration.
  double duration = 3.0;

  double yaw_rate() const {
    switch (maneuver) {
      case Maneuver::kLeft: return 0.5 * std::numbers::pi / duration;
      case Maneuver::kRight: return -0.5 * std::numbers::pi / duration;
      case Maneuver::kUTurn: return std::numbers::pi / duration;
      default: return 0.0;
    }
  }

  /// Position at time t (seconds, present = 0).
  Vec2 position(double t) const {
    const double c0 = std::cos(onset_heading), s0 = std::sin(onset_heading);
    const double tau = t - onset_time;
    if (tau <= 0.0 || maneuver == Maneuver::kStraight)
      return {onset_position.x + speed * tau * c0, onset_position.y + speed * tau * s0};

    if (maneuver == Maneuver::kStop) {
      const double decel = speed / duration;
      const double te = std::min(tau, duration);
      const double s = speed * te - 0.5 * decel * te * te;
      return {onset_position.x + s * c0, onset_position.y + s * s0};
    }

    const double w = yaw_rate();
    const double te = std::min(tau, duration);
    const double heading = onset_heading + w * te;
    Vec2 p{onset_position.x + speed / w * (std::sin(heading) - s0),
           onset_position.y - speed / w * (std::cos(heading) - c0)};
    if (tau > duration) {
      p.x += speed * (tau - duration) * std::cos(heading);
      p.y += speed * (tau - duration) * std::sin(heading);
    }
    return p;
  }
};

/// Times of history samples (ending at 0) and future samples (starting at dt).
inline std::vector<double> history_times(std::size_t steps, double dt) {
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) out[i] = -static_cast<double>(steps - 1 - i) * dt;
  return out;
}

inline std::vector<double> future_times(std::size_t steps, double dt) {
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) out[i] = static_cast<double>(i + 1) * dt;
  return out;
}

struct GeneratedScene {
  TrajectoryRecord record;
  ManeuverTemplate kinematics;
};

/// Deterministic for a fixed config. Returns records with their templates.
inline std::vector<GeneratedScene> generate_scenes(const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<int> pick_maneuver(config.maneuver_weights.begin(), config.maneuver_weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto th = history_times(config.history_steps, config.dt);
  const auto tf = future_times(config.future_steps, config.dt);
  const double duration = config.dt * static_cast<double>(config.future_steps);

  std::vector<GeneratedScene> out(config.n_scenes);
  for (std::size_t i = 0; i < config.n_scenes; ++i) {
    auto& [rec, kin] = out[i];
    kin.maneuver = static_cast<Maneuver>(pick_maneuver(rng));
    kin.speed = config.speed_min + (config.speed_max - config.speed_min) * unit(rng);
    kin.onset_position = {config.position_extent * (2.0 * unit(rng) - 1.0),
                          config.position_extent * (2.0 * unit(rng) - 1.0)};
    kin.onset_heading = 2.0 * std::numbers::pi * unit(rng);
    kin.onset_time = -config.onset_lead * unit(rng);
    kin.duration = duration;

    char id[32];
    std::snprintf(id, sizeof id, "scene_%06zu", i);
    rec.scene_id = id;
    rec.maneuver = kin.maneuver;
    rec.speed = kin.speed;
    rec.noise_sigma = config.noise_sigma;
    auto sample = [&](double t) {
      Vec2 p = kin.position(t);
      if (config.noise_sigma > 0.0) {
        p.x += config.noise_sigma * gauss(rng);
        p.y += config.noise_sigma * gauss(rng);
      }
      return p;
    };
    rec.history.reserve(th.size());
    for (double t : th) rec.history.push_back(sample(t));
    rec.future.reserve(tf.size());
    for (double t : tf) rec.future.push_back(sample(t));
  }

  // Exact split sizes, assigned through a seeded permutation.
  std::vector<std::size_t> perm(config.n_scenes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 split_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(perm.begin(), perm.end(), split_rng);
  std::size_t cursor = 0;
  double cumulative = 0.0;
  for (std::size_t s = 0; s < kSplitCount; ++s) {
    cumulative += config.split_fractions[s];
    const std::size_t end = s + 1 == kSplitCount
                                ? config.n_scenes
                                : static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(config.n_scenes)));
    for (; cursor < std::min(end, config.n_scenes); ++cursor) out[perm[cursor]].record.split = static_cast<Split>(s);
  }
  return out;
}

inline std::vector<TrajectoryRecord> generate(const GeneratorConfig& config) {
  auto scenes = generate_scenes(config);
  std::vector<TrajectoryRecord> out;
  out.reserve(scenes.size());
  for (auto& s : scenes) out.push_back(std::move(s.record));
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines dataset

namespace detail {

inline nlohmann::json points_to_json(const Trajectory& t) {
  auto arr = nlohmann::json::array();
  for (const auto& p : t) arr.push_back({p.x, p.y});
  return arr;
}

inline Trajectory points_from_json(const nlohmann::json& j, std::size_t line, const char* key) {
  if (!j.is_array()) throw ParseError(line, std::string(key) + " must be an array");
  Trajectory out;
  out.reserve(j.size());
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError(line, std::string(key) + " entries must be [x, y] number pairs");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const TrajectoryRecord& r) {
  nlohmann::json j;
  j["scene_id"] = r.scene_id;
  j["history"] = detail::points_to_json(r.history);
  j["future"] = detail::points_to_json(r.future);
  j["maneuver"] = to_string(r.maneuver);
  j["speed"] = r.speed;
  j["noise_sigma"] = r.noise_sigma;
  j["split"] = to_string(r.split);
  return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "record must be a JSON object");
  for (const char* key : {"scene_id", "history", "future", "maneuver", "speed", "noise_sigma", "split"})
    if (!j.contains(key)) throw ParseError(line, std::string("missing key '") + key + "'");
  TrajectoryRecord r;
  if (!j["scene_id"].is_string()) throw ParseError(line, "scene_id must be a string");
  r.scene_id = j["scene_id"].get<std::string>();
  r.history = detail::points_from_json(j["history"], line, "history");
  r.future = detail::points_from_json(j["future"], line, "future");
  if (r.history.empty() || r.future.empty()) throw ParseError(line, "history and future must be non-empty");
  if (!j["maneuver"].is_string() || !parse_maneuver(j["maneuver"].get<std::string>(), r.maneuver))
    throw ParseError(line, "unknown maneuver");
  if (!j["split"].is_string() || !parse_split(j["split"].get<std::string>(), r.split))
    throw ParseError(line, "unknown split");
  if (!j["speed"].is_number() || !j["noise_sigma"].is_number())
    throw ParseError(line, "speed and noise_sigma must be numbers");
  r.speed = j["speed"].get<double>();
  r.noise_sigma = j["noise_sigma"].get<double>();
  return r;
}

inline void write_dataset(std::span<const TrajectoryRecord> records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw DataError("write failed for " + path);
}

inline std::vector<TrajectoryRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  std::vector<TrajectoryRecord> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(record_from_json(j, line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsampling

enum class Selector { kRandom, kByScore };

/// Indices of the selected records in ascending (original) order.
/// by_score keeps the top ceil(fraction * N) scores; ties go to the smaller scene_id.
inline std::vector<std::size_t> subsample_indices(std::span<const TrajectoryRecord> records, double fraction,
                                                  Selector selector, std::uint64_t seed,
                                                  std::span<const double> scores = {}) {
  if (records.empty()) throw DataError("subsample: empty input");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must lie in (0, 1]");
  const std::size_t n = records.size();
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (selector == Selector::kRandom) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
  } else {
    if (scores.size() != n) throw ShapeError("subsample: one score per record required");
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return records[a].scene_id < records[b].scene_id;
    });
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<TrajectoryRecord> subsample(std::span<const TrajectoryRecord> records, double fraction,
                                               Selector selector, std::uint64_t seed,
                                               std::span<const double> scores = {}) {
  std::vector<TrajectoryRecord> out;
  for (std::size_t i : subsample_indices(records, fraction, selector, seed, scores)) out.push_back(records[i]);
  return out;
}

inline std::vector<TrajectoryRecord> filter_split(std::span<const TrajectoryRecord> records, Split split) {
  std::vector<TrajectoryRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

}  // namespace evtraj
