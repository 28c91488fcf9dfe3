#pragma once

// Displacement, rejection and calibration metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evtraj/errors.hpp"
#include "evtraj/scene.hpp"

namespace evtraj {

struct DisplacementResult {
  double min_ade = 0.0;
  double w_ade = 0.0;
  double min_fde = 0.0;
  double w_fde = 0.0;
  bool miss = false;
  /// Mode with the lowest ADE (lowest index on ties).
  std::size_t best_mode = 0;
};

inline constexpr double kDefaultMissThreshold = 2.0;

inline void check_probabilities(std::span<const double> probs, double tol = 1e-9) {
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw DomainError("probabilities must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol) throw DomainError("probabilities sum to " + std::to_string(sum) + ", expected 1");
}

inline DisplacementResult displacement(std::span<const Trajectory> modes, std::span<const double> probs,
                                       const Trajectory& gt, double miss_threshold = kDefaultMissThreshold) {
  if (modes.empty()) throw ShapeError("displacement needs at least one mode");
  if (probs.size() != modes.size()) throw ShapeError("one probability per mode required");
  if (gt.empty()) throw ShapeError("ground truth is empty");
  check_probabilities(probs);

  DisplacementResult r;
  r.min_ade = std::numeric_limits<double>::infinity();
  r.min_fde = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const Trajectory& m = modes[k];
    if (m.size() != gt.size()) throw ShapeError("mode horizon differs from ground truth");
    double ade = 0.0;
    for (std::size_t t = 0; t < gt.size(); ++t) ade += distance(m[t], gt[t]);
    ade /= static_cast<double>(gt.size());
    const double fde = distance(m.back(), gt.back());
    if (ade < r.min_ade) {
      r.min_ade = ade;
      r.best_mode = k;
    }
    r.min_fde = std::min(r.min_fde, fde);
    r.w_ade += probs[k] * ade;
    r.w_fde += probs[k] * fde;
  }
  r.miss = r.min_fde > miss_threshold;
  return r;
}

struct RejectionPoint {
  double rejection_fraction = 0.0;
  double retained_mean_error = 0.0;
};

/// Retained-mean-error curve at r = i/N, i = 0..N, rejecting the most uncertain first.
/// Within a group of equal uncertainties the curve is the expectation over the
/// group's removal orders, so it depends only on the errors, never on sample
/// order. The r = 1 value is 0.
inline std::vector<RejectionPoint> rejection_curve(std::span<const double> errors,
                                                   std::span<const double> uncertainties) {
  if (errors.size() != uncertainties.size()) throw ShapeError("errors and uncertainties differ in length");
  const std::size_t n = errors.size();
  if (n < 2) throw ShapeError("rejection curve needs at least two samples");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(errors[i]) || !std::isfinite(uncertainties[i]))
      throw DomainError("rejection curve inputs must be finite");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainties[a] > uncertainties[b]; });

  // suffix[i] = sum of errors of order[i..n).
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + errors[order[i]];

  std::vector<RejectionPoint> curve(n + 1);
  for (std::size_t begin = 0; begin < n;) {
    std::size_t end = begin + 1;
    while (end < n && uncertainties[order[end]] == uncertainties[order[begin]]) ++end;
    const double group_sum = suffix[begin] - suffix[end];
    const double m = static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const double kept = 1.0 - static_cast<double>(i - begin) / m;
      curve[i].retained_mean_error = (suffix[end] + kept * group_sum) / static_cast<double>(n - i);
    }
    begin = end;
  }
  for (std::size_t i = 0; i <= n; ++i) curve[i].rejection_fraction = static_cast<double>(i) / static_cast<double>(n);
  curve[n].retained_mean_error = 0.0;
  return curve;
}

/// Trapezoidal area under the rejection curve over [0, 1].
inline double rauc(std::span<const double> errors, std::span<const double> uncertainties) {
  const auto curve = rejection_curve(errors, uncertainties);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double dr = curve[i].rejection_fraction - curve[i - 1].rejection_fraction;
    area += 0.5 * dr * (curve[i].retained_mean_error + curve[i - 1].retained_mean_error);
  }
  return area;
}

/// Expected calibration error of the arg-max mode with equal-width, right-closed bins.
inline double ece(std::span<const std::vector<double>> prob_vectors, std::span<const std::size_t> correct_modes,
                  std::size_t bins = 10) {
  if (bins == 0) throw ConfigError("ece needs at least one bin");
  if (prob_vectors.size() != correct_modes.size()) throw ShapeError("one correct mode per probability vector");
  const std::size_t n = prob_vectors.size();
  if (n == 0) throw ShapeError("ece needs at least one sample");

  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = prob_vectors[i];
    if (p.empty()) throw ShapeError("empty probability vector");
    check_probabilities(p);
    const auto it = std::max_element(p.begin(), p.end());
    const double conf = *it;
    const auto predicted = static_cast<std::size_t>(it - p.begin());
    // Bin b covers (b/B, (b+1)/B]; confidence 0 lands in bin 0. The product
    // conf * B can round across an edge, so settle against the edges themselves.
    const double nb = static_cast<double>(bins);
    auto b = static_cast<std::size_t>(std::ceil(conf * nb));
    b = b == 0 ? 0 : std::min(b - 1, bins - 1);
    while (b > 0 && conf <= static_cast<double>(b) / nb) --b;
    while (b + 1 < bins && conf > static_cast<double>(b + 1) / nb) ++b;
    conf_sum[b] += conf;
    acc_sum[b] += predicted == correct_modes[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / static_cast<double>(n)) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; empty when either side has no variation.
inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace evtraj
