#pragma once

#include <cmath>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace evtraj::special {

inline double lgamma(double x) { return std::lgamma(x); }

inline double digamma(double x) { return boost::math::digamma(x); }

inline double trigamma(double x) { return boost::math::trigamma(x); }

/// log(1 + exp(x)) without overflow for large x.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace evtraj::special
