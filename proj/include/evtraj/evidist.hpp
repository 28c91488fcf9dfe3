#pragma once

// Normal-Inverse-Gamma and Dirichlet evidential distributions.
//
// Every function is templated on the scalar so the same expression serves
// plain evaluation (double) and reverse-mode differentiation (ad::Var).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "evtraj/autodiff.hpp"
#include "evtraj/errors.hpp"
#include "evtraj/special.hpp"

namespace evtraj {

/// Evidential regression parameters for one position component.
/// gamma is the predicted location (m), nu the evidence weight on the mean,
/// alpha/beta the inverse-gamma shape and scale (squared position units) of the noise variance.
template <typename T>
struct BasicNIGParams {
  T gamma{0.0};
  T nu{1.0};
  T alpha{2.0};
  T beta{1.0};
};

using NIGParams = BasicNIGParams<double>;

namespace detail {
template <typename T>
void check_nig(const BasicNIGParams<T>& p, double min_alpha) {
  const double g = value_of(p.gamma), n = value_of(p.nu), a = value_of(p.alpha), b = value_of(p.beta);
  if (!std::isfinite(g) || !std::isfinite(n) || !std::isfinite(a) || !std::isfinite(b))
    throw DomainError("NIG parameters must be finite");
  if (!(n > 0.0)) throw DomainError("NIG nu must be > 0, got " + std::to_string(n));
  if (!(a > min_alpha))
    throw DomainError("NIG alpha must be > " + std::to_string(min_alpha) + ", got " + std::to_string(a));
  if (!(b > 0.0)) throw DomainError("NIG beta must be > 0, got " + std::to_string(b));
}
}  // namespace detail

/// Throws DomainError unless nu > 0, alpha > 1, beta > 0 and all finite.
template <typename T>
void validate(const BasicNIGParams<T>& p) {
  detail::check_nig(p, 1.0);
}

/// Weaker check for densities and divergences, which only need alpha > 0.
template <typename T>
void validate_likelihood(const BasicNIGParams<T>& p) {
  detail::check_nig(p, 0.0);
}

/// Variances (squared position units) along one axis.
template <typename T>
struct BasicAxisUncertainty {
  T aleatoric{0.0};
  T epistemic{0.0};
  T total{0.0};
};

using AxisUncertainty = BasicAxisUncertainty<double>;

template <typename T>
BasicAxisUncertainty<T> nig_uncertainties(const BasicNIGParams<T>& p) {
  validate(p);
  BasicAxisUncertainty<T> u;
  u.aleatoric = p.beta / (p.alpha - 1.0);
  u.epistemic = u.aleatoric / p.nu;
  u.total = u.aleatoric + u.epistemic;
  return u;
}

/// 2 beta (1 + nu): the evidence scale appearing in the marginal likelihood.
template <typename T>
T evidence_omega(const BasicNIGParams<T>& p) {
  return 2.0 * p.beta * (1.0 + p.nu);
}

struct StudentT {
  double location = 0.0;
  double scale = 1.0;
  double degrees_of_freedom = 1.0;
};

/// Predictive marginal of a NIG: St(gamma, beta (1 + nu) / (nu alpha), 2 alpha).
inline StudentT student_t_marginal(const NIGParams& p) {
  validate_likelihood(p);
  return StudentT{p.gamma, std::sqrt(p.beta * (1.0 + p.nu) / (p.nu * p.alpha)), 2.0 * p.alpha};
}

/// Negative log density of a location-scale Student-t at y.
inline double student_t_nll(const StudentT& t, double y) {
  const double dof = t.degrees_of_freedom;
  const double z = (y - t.location) / t.scale;
  return -special::lgamma(0.5 * (dof + 1.0)) + special::lgamma(0.5 * dof) +
         0.5 * std::log(dof * std::numbers::pi) + std::log(t.scale) +
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

/// KL[NIG(p) || NIG(prior)], inverse-gamma term plus expected Gaussian term.
template <typename T>
T nig_kl(const BasicNIGParams<T>& p, const BasicNIGParams<T>& prior) {
  using special::digamma;
  using special::lgamma;
  using std::log;
  validate_likelihood(p);
  validate_likelihood(prior);
  const T diff = p.gamma - prior.gamma;
  const T inv_gamma = (p.alpha - prior.alpha) * digamma(p.alpha) - lgamma(p.alpha) + lgamma(prior.alpha) +
                      prior.alpha * log(p.beta / prior.beta) + p.alpha * (prior.beta - p.beta) / p.beta;
  const T gauss = 0.5 * log(p.nu / prior.nu) + prior.nu / (2.0 * p.nu) - 0.5 +
                  prior.nu * diff * diff * p.alpha / (2.0 * p.beta);
  return inv_gamma + gauss;
}

/// Dirichlet concentration parameters over K trajectory modes.
template <typename T>
struct BasicDirichletEvidence {
  std::vector<T> alphas;

  std::size_t size() const noexcept { return alphas.size(); }

  T total() const {
    T s{0.0};
    for (const T& a : alphas) s += a;
    return s;
  }
};

using DirichletEvidence = BasicDirichletEvidence<double>;

template <typename T>
void validate(const BasicDirichletEvidence<T>& d) {
  if (d.alphas.empty()) throw DomainError("Dirichlet needs at least one mode");
  for (const T& a : d.alphas) {
    const double v = value_of(a);
    if (!std::isfinite(v) || v < 1.0)
      throw DomainError("Dirichlet concentration must be finite and >= 1, got " + std::to_string(v));
  }
}

template <typename T>
struct BasicDirichletStats {
  std::vector<T> probabilities;
  T total_evidence{0.0};
  T cls_uncertainty{1.0};
};

using DirichletStats = BasicDirichletStats<double>;

/// Mean mode probabilities, S and the classification uncertainty K / S.
template <typename T>
BasicDirichletStats<T> dirichlet_stats(const BasicDirichletEvidence<T>& d) {
  validate(d);
  BasicDirichletStats<T> out;
  out.total_evidence = d.total();
  out.probabilities.reserve(d.size());
  for (const T& a : d.alphas) out.probabilities.push_back(a / out.total_evidence);
  out.cls_uncertainty = static_cast<double>(d.size()) / out.total_evidence;
  return out;
}

template <typename T>
T dirichlet_kl(const BasicDirichletEvidence<T>& d, const BasicDirichletEvidence<T>& prior) {
  using special::digamma;
  using special::lgamma;
  validate(d);
  validate(prior);
  if (d.size() != prior.size())
    throw ShapeError("dirichlet_kl: K=" + std::to_string(d.size()) + " vs prior K=" + std::to_string(prior.size()));
  const T s = d.total();
  const T s0 = prior.total();
  const T psi_s = digamma(s);
  T kl = lgamma(s) - lgamma(s0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    kl += lgamma(prior.alphas[k]) - lgamma(d.alphas[k]);
    kl += (d.alphas[k] - prior.alphas[k]) * (digamma(d.alphas[k]) - psi_s);
  }
  return kl;
}

}  // namespace evtraj
