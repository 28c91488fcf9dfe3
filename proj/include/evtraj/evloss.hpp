#pragma once

// Evidential training losses for multi-modal trajectory prediction.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <stdexcept>
#include <type_traits>

#include "evtraj/evidist.hpp"
#include "evtraj/scene.hpp"

namespace evtraj {

struct LossWeights {
  double lambda1 = 0.01;  ///< residual-times-evidence regularizer
  double lambda2 = 0.0;   ///< KL of the NIG towards its prior
  double lambda3 = 1.0;   ///< KL of the misleading Dirichlet evidence
  double lambda4 = 1.0;   ///< classification loss in the total

  void validate() const {
    for (double l : {lambda1, lambda2, lambda3, lambda4})
      if (!std::isfinite(l) || l < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
};

/// Which evidence measure scales the absolute residual in the regularizer.
enum class EvidenceMultiplier {
  kTwoNuPlusAlpha,  ///< 2 nu + alpha
  kOmega,           ///< 2 beta (1 + nu)
};

/// Prior of the regression KL term. In relative mode gamma0 and beta0 are copies
/// of the prediction held constant under differentiation, so only evidence
/// (nu, alpha) is penalised.
struct RegressionPrior {
  bool relative = true;
  double nu0 = 0.1;
  double alpha0 = 1.01;
  NIGParams fixed{0.0, 0.1, 1.01, 1.0};

  template <typename T>
  BasicNIGParams<T> for_prediction(const BasicNIGParams<T>& p) const {
    if (!relative) return {T{fixed.gamma}, T{fixed.nu}, T{fixed.alpha}, T{fixed.beta}};
    return {T{value_of(p.gamma)}, T{nu0}, T{alpha0}, T{value_of(p.beta)}};
  }
};

struct LossOptions {
  LossWeights weights;
  EvidenceMultiplier multiplier = EvidenceMultiplier::kTwoNuPlusAlpha;
  RegressionPrior reg_prior;
  /// Classification prior; all-ones of size K when empty.
  DirichletEvidence cls_prior;
};

/// Negative log of the Student-t marginal, written in terms of Omega = 2 beta (1 + nu).
template <typename T>
T reg_nll(const BasicNIGParams<T>& p, std::type_identity_t<T> y) {
  using special::lgamma;
  using std::log;
  validate_likelihood(p);
  const T omega = evidence_omega(p);
  const T r = y - p.gamma;
  return 0.5 * log(std::numbers::pi / p.nu) - p.alpha * log(omega) +
         (p.alpha + 0.5) * log(r * r * p.nu + omega) + lgamma(p.alpha) - lgamma(p.alpha + 0.5);
}

template <typename T>
T reg_regularizer(const BasicNIGParams<T>& p, std::type_identity_t<T> y,
                  EvidenceMultiplier multiplier = EvidenceMultiplier::kTwoNuPlusAlpha) {
  using std::abs;
  validate_likelihood(p);
  const T evidence = multiplier == EvidenceMultiplier::kOmega ? evidence_omega(p) : 2.0 * p.nu + p.alpha;
  return abs(y - p.gamma) * evidence;
}

template <typename T>
struct RegLossParts {
  T nll{0.0};
  T reg{0.0};
  T kl{0.0};
};

template <typename T>
RegLossParts<T> reg_loss_parts(const BasicNIGParams<T>& p, std::type_identity_t<T> y, const BasicNIGParams<T>& prior,
                               EvidenceMultiplier multiplier = EvidenceMultiplier::kTwoNuPlusAlpha) {
  return {reg_nll(p, y), reg_regularizer(p, y, multiplier), nig_kl(p, prior)};
}

template <typename T>
T reg_loss(const BasicNIGParams<T>& p, std::type_identity_t<T> y, const BasicNIGParams<T>& prior, const LossWeights& w,
           EvidenceMultiplier multiplier = EvidenceMultiplier::kTwoNuPlusAlpha) {
  const auto parts = reg_loss_parts(p, y, prior, multiplier);
  return parts.nll + w.lambda1 * parts.reg + w.lambda2 * parts.kl;
}

template <typename T>
struct ClsLossParts {
  T squared{0.0};
  T kl{0.0};
};

/// Squared error of the Dirichlet mean against the one-hot target plus the
/// Dirichlet variance, and the KL of the evidence left after zeroing the target.
template <typename T>
ClsLossParts<T> cls_loss_parts(const BasicDirichletEvidence<T>& d, std::size_t target,
                               const BasicDirichletEvidence<T>& prior) {
  validate(d);
  const std::size_t k_count = d.size();
  if (target >= k_count)
    throw std::out_of_range("target mode " + std::to_string(target) + " out of range for K=" +
                            std::to_string(k_count));
  const T s = d.total();
  ClsLossParts<T> out;
  BasicDirichletEvidence<T> misleading;
  misleading.alphas.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double y = k == target ? 1.0 : 0.0;
    const T p = d.alphas[k] / s;
    const T err = y - p;
    out.squared += err * err + d.alphas[k] * (s - d.alphas[k]) / (s * s * (s + 1.0));
    misleading.alphas.push_back(k == target ? T{1.0} : d.alphas[k]);
  }
  out.kl = dirichlet_kl(misleading, prior);
  return out;
}

template <typename T>
T cls_loss(const BasicDirichletEvidence<T>& d, std::size_t target, const LossWeights& w,
           const BasicDirichletEvidence<T>& prior) {
  const auto parts = cls_loss_parts(d, target, prior);
  return parts.squared + w.lambda3 * parts.kl;
}

/// Summed Euclidean displacement of each mode's means from gt; lowest index wins ties.
template <typename T>
std::size_t winner_mode(const BasicScenePrediction<T>& pred, const Trajectory& gt) {
  if (gt.size() != pred.horizon())
    throw ShapeError("ground truth has " + std::to_string(gt.size()) + " steps, prediction " +
                     std::to_string(pred.horizon()));
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pred.modes(); ++k) {
    double cost = 0.0;
    for (std::size_t t = 0; t < pred.horizon(); ++t) cost += distance(pred.mean(k, t), gt[t]);
    if (cost < best_cost) {
      best_cost = cost;
      best = k;
    }
  }
  return best;
}

template <typename T>
struct BasicLossBreakdown {
  T nll_reg{0.0};
  T r_reg{0.0};
  T kl_reg{0.0};
  T squared_cls{0.0};
  T kl_cls{0.0};
  T total{0.0};
  std::size_t winner = 0;
};

using LossBreakdown = BasicLossBreakdown<double>;

template <typename T>
T recompose_total(const BasicLossBreakdown<T>& b, const LossWeights& w) {
  return b.nll_reg + w.lambda1 * b.r_reg + w.lambda2 * b.kl_reg +
         w.lambda4 * (b.squared_cls + w.lambda3 * b.kl_cls);
}

inline DirichletEvidence uniform_dirichlet(std::size_t k) { return DirichletEvidence{std::vector<double>(k, 1.0)}; }

/// Winner-takes-all total loss for one agent.
template <typename T>
BasicLossBreakdown<T> total_loss(const BasicScenePrediction<T>& pred, const Trajectory& gt,
                                 const LossOptions& options = {}) {
  const LossWeights& w = options.weights;
  BasicLossBreakdown<T> out;
  out.winner = winner_mode(pred, gt);
  const std::size_t k = out.winner;
  for (std::size_t t = 0; t < pred.horizon(); ++t) {
    for (Axis axis : {Axis::kX, Axis::kY}) {
      const auto& p = pred.at(k, t, axis);
      const T y{axis == Axis::kX ? gt[t].x : gt[t].y};
      const auto parts = reg_loss_parts(p, y, options.reg_prior.for_prediction(p), options.multiplier);
      out.nll_reg += parts.nll;
      out.r_reg += parts.reg;
      out.kl_reg += parts.kl;
    }
  }
  const double terms = 2.0 * static_cast<double>(pred.horizon());
  out.nll_reg /= terms;
  out.r_reg /= terms;
  out.kl_reg /= terms;

  BasicDirichletEvidence<T> prior;
  if (options.cls_prior.alphas.empty()) {
    prior.alphas.assign(pred.modes(), T{1.0});
  } else {
    if (options.cls_prior.size() != pred.modes()) throw ShapeError("classification prior size does not match K");
    for (double a : options.cls_prior.alphas) prior.alphas.push_back(T{a});
  }
  const auto cls = cls_loss_parts(pred.evidence(), k, prior);
  out.squared_cls = cls.squared;
  out.kl_cls = cls.kl;
  out.total = recompose_total(out, w);
  return out;
}

}  // namespace evtraj
