#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "evtraj/evidist.hpp"

namespace evtraj {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Positions sampled at a fixed rate, oldest first.
using Trajectory = std::vector<Vec2>;

enum class Axis : std::size_t { kX = 0, kY = 1 };

/// K modes x T' steps x 2 axes of NIG parameters plus Dirichlet evidence over modes.
template <typename T>
class BasicScenePrediction {
 public:
  BasicScenePrediction() = default;
  BasicScenePrediction(std::size_t modes, std::size_t horizon)
      : modes_(modes), horizon_(horizon), nig_(modes * horizon * 2) {
    evidence_.alphas.assign(modes, T{1.0});
  }

  std::size_t modes() const noexcept { return modes_; }
  std::size_t horizon() const noexcept { return horizon_; }

  BasicNIGParams<T>& at(std::size_t k, std::size_t t, Axis axis) { return nig_[index(k, t, axis)]; }
  const BasicNIGParams<T>& at(std::size_t k, std::size_t t, Axis axis) const { return nig_[index(k, t, axis)]; }

  BasicDirichletEvidence<T>& evidence() noexcept { return evidence_; }
  const BasicDirichletEvidence<T>& evidence() const noexcept { return evidence_; }

  /// Predicted mean position of mode k at step t.
  Vec2 mean(std::size_t k, std::size_t t) const {
    return {value_of(at(k, t, Axis::kX).gamma), value_of(at(k, t, Axis::kY).gamma)};
  }

  Trajectory mean_trajectory(std::size_t k) const {
    Trajectory out(horizon_);
    for (std::size_t t = 0; t < horizon_; ++t) out[t] = mean(k, t);
    return out;
  }

  /// Throws unless every contained parameter satisfies its invariants.
  void validate() const {
    if (modes_ == 0) throw ShapeError("prediction needs at least one mode");
    if (evidence_.size() != modes_) throw ShapeError("evidence size does not match mode count");
    for (const auto& p : nig_) evtraj::validate(p);
    evtraj::validate(evidence_);
  }

 private:
  std::size_t index(std::size_t k, std::size_t t, Axis axis) const {
    return (k * horizon_ + t) * 2 + static_cast<std::size_t>(axis);
  }

  std::size_t modes_ = 0;
  std::size_t horizon_ = 0;
  std::vector<BasicNIGParams<T>> nig_;
  BasicDirichletEvidence<T> evidence_;
};

using ScenePrediction = BasicScenePrediction<double>;

}  // namespace evtraj
