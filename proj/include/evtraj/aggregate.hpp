#pragma once

// Uncertainty aggregation from per-axis NIG variances up to one scalar per agent.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evtraj/evidist.hpp"
#include "evtraj/scene.hpp"

namespace evtraj {

/// Which per-axis variance feeds the aggregation.
enum class UncertaintyComponent { kTotal, kEpistemic, kAleatoric };

struct UncertaintyReport {
  std::size_t modes = 0;
  std::size_t horizon = 0;
  /// Indexed [(t * modes + k) * 2 + axis].
  std::vector<AxisUncertainty> per_axis;
  /// Indexed [t * modes + k], squared position units.
  std::vector<double> per_point;
  /// One entry per mode, squared position units.
  std::vector<double> per_trajectory;
  double cls_uncertainty = 1.0;
  double agent = 0.0;

  const AxisUncertainty& axis(std::size_t t, std::size_t k, Axis a) const {
    return per_axis[(t * modes + k) * 2 + static_cast<std::size_t>(a)];
  }
  double point(std::size_t t, std::size_t k) const { return per_point[t * modes + k]; }
};

inline double component_of(const AxisUncertainty& u, UncertaintyComponent c) {
  switch (c) {
    case UncertaintyComponent::kEpistemic:
      return u.epistemic;
    case UncertaintyComponent::kAleatoric:
      return u.aleatoric;
    case UncertaintyComponent::kTotal:
      break;
  }
  return u.total;
}

inline double point_uncertainty(const AxisUncertainty& x, const AxisUncertainty& y) { return x.total + y.total; }

inline double trajectory_uncertainty(std::span<const double> points) {
  if (points.empty()) throw ShapeError("trajectory_uncertainty needs at least one point");
  double sum = 0.0;
  for (double p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

/// (1/K) sum_k (K/S) U_traj,k
inline double agent_uncertainty(std::span<const double> trajectories, const DirichletEvidence& d) {
  const auto stats = dirichlet_stats(d);
  if (trajectories.size() != d.size())
    throw ShapeError("agent_uncertainty: " + std::to_string(trajectories.size()) + " trajectories for K=" +
                     std::to_string(d.size()));
  double sum = 0.0;
  for (double u : trajectories) sum += stats.cls_uncertainty * u;
  return sum / static_cast<double>(d.size());
}

inline UncertaintyReport build_report(const ScenePrediction& pred,
                                      UncertaintyComponent component = UncertaintyComponent::kTotal) {
  pred.validate();
  UncertaintyReport r;
  r.modes = pred.modes();
  r.horizon = pred.horizon();
  if (r.horizon == 0) throw ShapeError("prediction horizon must be >= 1");
  r.per_axis.resize(r.modes * r.horizon * 2);
  r.per_point.resize(r.modes * r.horizon);
  for (std::size_t t = 0; t < r.horizon; ++t) {
    for (std::size_t k = 0; k < r.modes; ++k) {
      AxisUncertainty ux = nig_uncertainties(pred.at(k, t, Axis::kX));
      AxisUncertainty uy = nig_uncertainties(pred.at(k, t, Axis::kY));
      r.per_axis[(t * r.modes + k) * 2] = ux;
      r.per_axis[(t * r.modes + k) * 2 + 1] = uy;
      if (component != UncertaintyComponent::kTotal) {
        // Route the selected component through the same point sum.
        ux.total = component_of(ux, component);
        uy.total = component_of(uy, component);
      }
      r.per_point[t * r.modes + k] = point_uncertainty(ux, uy);
    }
  }
  r.per_trajectory.resize(r.modes);
  std::vector<double> column(r.horizon);
  for (std::size_t k = 0; k < r.modes; ++k) {
    for (std::size_t t = 0; t < r.horizon; ++t) column[t] = r.point(t, k);
    r.per_trajectory[k] = trajectory_uncertainty(column);
  }
  r.cls_uncertainty = dirichlet_stats(pred.evidence()).cls_uncertainty;
  r.agent = agent_uncertainty(r.per_trajectory, pred.evidence());
  return r;
}

}  // namespace evtraj
