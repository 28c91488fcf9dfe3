#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "evtraj/synthgen.hpp"

using evtraj::GeneratorConfig;
using evtraj::Maneuver;
using evtraj::Split;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("evtraj_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Generate, ByteIdenticalForSameConfig) {
  GeneratorConfig c;
  c.n_scenes = 300;
  c.seed = 42;
  const auto a = temp_path("det_a.jsonl"), b = temp_path("det_b.jsonl");
  evtraj::write_dataset(evtraj::generate(c), a);
  evtraj::write_dataset(evtraj::generate(c), b);
  EXPECT_EQ(slurp(a), slurp(b));
  c.seed = 43;
  evtraj::write_dataset(evtraj::generate(c), b);
  EXPECT_NE(slurp(a), slurp(b));
}

TEST(Generate, DegenerateWeightsGiveOnlyStraight) {
  GeneratorConfig c;
  c.n_scenes = 500;
  c.maneuver_weights = {1, 0, 0, 0, 0};
  for (const auto& r : evtraj::generate(c)) EXPECT_EQ(r.maneuver, Maneuver::kStraight);
}

TEST(Generate, ManeuverFrequenciesWithinThreeSigma) {
  GeneratorConfig c;
  c.n_scenes = 10000;
  c.seed = 7;
  const auto recs = evtraj::generate(c);
  std::array<double, evtraj::kManeuverCount> counts{};
  for (const auto& r : recs) counts[static_cast<std::size_t>(r.maneuver)] += 1.0;
  for (std::size_t m = 0; m < evtraj::kManeuverCount; ++m) {
    const double p = c.maneuver_weights[m];
    const double n = static_cast<double>(c.n_scenes);
    EXPECT_LE(std::abs(counts[m] - n * p), 3.0 * std::sqrt(n * p * (1.0 - p))) << evtraj::to_string(Maneuver(m));
  }
}

TEST(Generate, RareManeuverShareInTrainingSplit) {
  GeneratorConfig c;
  c.n_scenes = 20000;
  c.seed = 8;
  double n = 0.0, uturn = 0.0;
  for (const auto& r : evtraj::generate(c)) {
    if (!r.in_training()) continue;
    n += 1.0;
    uturn += r.maneuver == Maneuver::kUTurn;
  }
  EXPECT_LE(std::abs(uturn - 0.01 * n), 3.0 * std::sqrt(n * 0.01 * 0.99));
}

TEST(Generate, NoiseFreeFuturesLieOnTemplate) {
  GeneratorConfig c;
  c.n_scenes = 500;
  c.noise_sigma = 0.0;
  c.maneuver_weights = {1, 1, 1, 1, 1};
  const auto scenes = evtraj::generate_scenes(c);
  const auto th = evtraj::history_times(c.history_steps, c.dt);
  const auto tf = evtraj::future_times(c.future_steps, c.dt);
  for (const auto& s : scenes) {
    for (std::size_t i = 0; i < tf.size(); ++i)
      EXPECT_LT(evtraj::distance(s.record.future[i], s.kinematics.position(tf[i])), 1e-9);
    for (std::size_t i = 0; i < th.size(); ++i)
      EXPECT_LT(evtraj::distance(s.record.history[i], s.kinematics.position(th[i])), 1e-9);
  }
}

TEST(Generate, ManeuverEndStates) {
  // Heading change after the full sweep, from the last two noise-free future points.
  GeneratorConfig c;
  c.n_scenes = 200;
  c.noise_sigma = 0.0;
  c.onset_lead = 0.0;
  c.maneuver_weights = {1, 1, 1, 1, 1};
  for (const auto& s : evtraj::generate_scenes(c)) {
    const auto& k = s.kinematics;
    const double duration = c.dt * static_cast<double>(c.future_steps);
    const evtraj::Vec2 a = k.position(duration - 1e-4), b = k.position(duration);
    const double heading = std::atan2(b.y - a.y, b.x - a.x);
    auto turned = [&](double delta) { return std::remainder(heading - k.onset_heading - delta, 2.0 * std::numbers::pi); };
    switch (k.maneuver) {
      case Maneuver::kStraight: EXPECT_NEAR(turned(0.0), 0.0, 1e-6); break;
      case Maneuver::kLeft: EXPECT_NEAR(turned(0.5 * std::numbers::pi), 0.0, 1e-3); break;
      case Maneuver::kRight: EXPECT_NEAR(turned(-0.5 * std::numbers::pi), 0.0, 1e-3); break;
      case Maneuver::kUTurn: EXPECT_NEAR(std::abs(turned(std::numbers::pi)), 0.0, 1e-3); break;
      case Maneuver::kStop: EXPECT_LT(evtraj::distance(a, b), 1e-6); break;
    }
  }
}

TEST(Generate, SpacingConsistentWithSpeed) {
  GeneratorConfig c;
  c.n_scenes = 400;
  c.maneuver_weights = {1, 1, 1, 1, 1};
  for (const double sigma : {0.0, 0.05}) {
    c.noise_sigma = sigma;
    for (const auto& r : evtraj::generate(c)) {
      auto pts = r.history;
      pts.insert(pts.end(), r.future.begin(), r.future.end());
      for (std::size_t i = 1; i < pts.size(); ++i) {
        const double step = evtraj::distance(pts[i - 1], pts[i]);
        const double expected = r.speed * c.dt;
        // The difference of two noisy points has sigma * sqrt(2) per axis.
        const double tol = 6.0 * sigma + 1e-9;
        EXPECT_LE(step, expected * (1.0 + 1e-12) + tol);
        if (r.maneuver != Maneuver::kStop) {
          EXPECT_GE(step, expected * (1.0 - 1e-3) - tol);
        }
        EXPECT_TRUE(std::isfinite(pts[i].x) && std::isfinite(pts[i].y));
      }
    }
  }
}

TEST(Generate, ExactSplitSizes) {
  GeneratorConfig c;
  c.n_scenes = 1000;
  std::array<std::size_t, evtraj::kSplitCount> n{};
  for (const auto& r : evtraj::generate(c)) ++n[static_cast<std::size_t>(r.split)];
  EXPECT_EQ(n[0], 350u);
  EXPECT_EQ(n[1], 350u);
  EXPECT_EQ(n[2], 150u);
  EXPECT_EQ(n[3], 150u);
}

TEST(Generate, InvalidConfig) {
  GeneratorConfig c;
  c.maneuver_weights = {0, 0, 0, 0, 0};
  EXPECT_THROW(evtraj::generate(c), evtraj::ConfigError);
  c = {};
  c.speed_min = -1.0;
  EXPECT_THROW(evtraj::generate(c), evtraj::ConfigError);
  c = {};
  c.split_fractions = {0.5, 0.5, 0.5, 0.0};
  EXPECT_THROW(evtraj::generate(c), evtraj::ConfigError);
}

TEST(Generate, ConfigFromKeyValues) {
  auto kv = evtraj::KeyValueConfig::parse(
      "n_scenes = 12  # small\nmaneuver_weights = 1, 0, 0, 0, 1\nseed = 5\nspeed_min = 3\nspeed_max = 4\n");
  const auto c = GeneratorConfig::from(kv);
  kv.require_all_used();
  EXPECT_EQ(c.n_scenes, 12u);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.maneuver_weights[4], 1.0);
  auto typo = evtraj::KeyValueConfig::parse("n_scene = 12\n");
  GeneratorConfig::from(typo);
  EXPECT_THROW(typo.require_all_used(), evtraj::ConfigError);
  EXPECT_THROW(GeneratorConfig::from(evtraj::KeyValueConfig::parse("maneuver_weights = 1, 2\n")), evtraj::ConfigError);
}

TEST(Dataset, EmptyRoundTrip) {
  const auto path = temp_path("empty.jsonl");
  evtraj::write_dataset({}, path);
  EXPECT_EQ(slurp(path), "");
  EXPECT_TRUE(evtraj::read_dataset(path).empty());
}

TEST(Dataset, RoundTripPreservesRecords) {
  GeneratorConfig c;
  c.n_scenes = 1000;
  c.maneuver_weights = {1, 1, 1, 1, 1};
  const auto recs = evtraj::generate(c);
  const auto path = temp_path("roundtrip.jsonl");
  evtraj::write_dataset(recs, path);
  const auto back = evtraj::read_dataset(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].scene_id, recs[i].scene_id);
    EXPECT_EQ(back[i].maneuver, recs[i].maneuver);
    EXPECT_EQ(back[i].split, recs[i].split);
    EXPECT_EQ(back[i].speed, recs[i].speed);
    EXPECT_EQ(back[i].noise_sigma, recs[i].noise_sigma);
    ASSERT_EQ(back[i].history.size(), recs[i].history.size());
    ASSERT_EQ(back[i].future.size(), recs[i].future.size());
    for (std::size_t t = 0; t < recs[i].history.size(); ++t)
      EXPECT_LE(evtraj::distance(back[i].history[t], recs[i].history[t]), 1e-9);
    for (std::size_t t = 0; t < recs[i].future.size(); ++t)
      EXPECT_LE(evtraj::distance(back[i].future[t], recs[i].future[t]), 1e-9);
  }
}

TEST(Dataset, FixedKeyNames) {
  GeneratorConfig c;
  c.n_scenes = 1;
  const auto j = evtraj::to_json(evtraj::generate(c)[0]);
  for (const char* key : {"scene_id", "history", "future", "maneuver", "speed", "noise_sigma", "split"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.size(), 7u);
}

TEST(Dataset, MalformedLineIsNamed) {
  GeneratorConfig c;
  c.n_scenes = 3;
  const auto path = temp_path("malformed.jsonl");
  evtraj::write_dataset(evtraj::generate(c), path);
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"scene_id\": \"x\", \"history\": [[0, 0]]}\n";
  }
  try {
    evtraj::read_dataset(path);
    FAIL() << "expected a parse error";
  } catch (const evtraj::ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
  {
    std::ofstream out(path, std::ios::trunc);
    out << "not json\n";
  }
  EXPECT_THROW(evtraj::read_dataset(path), evtraj::ParseError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"scene_id":"a","history":[[0,0,1]],"future":[[1,1]],"maneuver":"left","speed":1,"noise_sigma":0,"split":"test"})"
        << "\n";
  }
  EXPECT_THROW(evtraj::read_dataset(path), evtraj::ParseError);
  EXPECT_THROW(evtraj::read_dataset(temp_path("does_not_exist.jsonl")), evtraj::DataError);
}

std::vector<evtraj::TrajectoryRecord> small_pool(std::size_t n) {
  GeneratorConfig c;
  c.n_scenes = n;
  return evtraj::generate(c);
}

TEST(Subsample, FullFractionIsIdentity) {
  const auto recs = small_pool(50);
  const auto out = evtraj::subsample(recs, 1.0, evtraj::Selector::kRandom, 3);
  ASSERT_EQ(out.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(out[i].scene_id, recs[i].scene_id);
}

TEST(Subsample, ByScoreKeepsTopK) {
  const auto recs = small_pool(40);
  std::vector<double> scores(40);
  for (std::size_t i = 0; i < 40; ++i) scores[i] = static_cast<double>((i * 17) % 40);
  const auto idx = evtraj::subsample_indices(recs, 0.25, evtraj::Selector::kByScore, 0, scores);
  ASSERT_EQ(idx.size(), 10u);
  for (std::size_t i : idx) EXPECT_GE(scores[i], 30.0);
}

TEST(Subsample, ByScoreTiesGoToSmallerSceneId) {
  const auto recs = small_pool(6);
  const std::vector<double> scores(6, 1.0);
  const auto idx = evtraj::subsample_indices(recs, 0.5, evtraj::Selector::kByScore, 0, scores);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Subsample, CeilOfFraction) {
  const auto recs = small_pool(10);
  EXPECT_EQ(evtraj::subsample(recs, 0.31, evtraj::Selector::kRandom, 1).size(), 4u);
  EXPECT_EQ(evtraj::subsample(recs, 0.3, evtraj::Selector::kRandom, 1).size(), 3u);
}

TEST(Subsample, RandomIsReproducible) {
  const auto recs = small_pool(100);
  const auto a = evtraj::subsample_indices(recs, 0.3, evtraj::Selector::kRandom, 9);
  const auto b = evtraj::subsample_indices(recs, 0.3, evtraj::Selector::kRandom, 9);
  const auto c = evtraj::subsample_indices(recs, 0.3, evtraj::Selector::kRandom, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
}

TEST(Subsample, Errors) {
  const auto recs = small_pool(5);
  EXPECT_THROW(evtraj::subsample({}, 0.5, evtraj::Selector::kRandom, 0), evtraj::DataError);
  EXPECT_THROW(evtraj::subsample(recs, 0.0, evtraj::Selector::kRandom, 0), evtraj::ConfigError);
  EXPECT_THROW(evtraj::subsample(recs, 1.5, evtraj::Selector::kRandom, 0), evtraj::ConfigError);
  EXPECT_THROW(evtraj::subsample(recs, 0.5, evtraj::Selector::kByScore, 0), evtraj::ShapeError);
}

}  // namespace
