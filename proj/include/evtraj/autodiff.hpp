#pragma once

// Scalar reverse-mode differentiation.
//
// A Tape records every elementary operation as a node with at most two
// parents and the local partial derivative towards each. Var is a light
// handle (tape pointer, node index, cached value). A Var with no tape is a
// constant and is never recorded.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "evtraj/special.hpp"

namespace evtraj::ad {

class Tape;

class Var {
 public:
  Var() = default;
  // Implicit so templated code can mix literals and variables.
  Var(double constant) : value_(constant) {}  // NOLINT

  double value() const noexcept { return value_; }
  bool is_constant() const noexcept { return tape_ == nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index, double value)
      : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

class Tape {
 public:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  Var variable(double value) { return push(value, kNone, 0.0, kNone, 0.0); }

  // Records value as a function of a (and b) with the given local partials.
  Var unary(double value, const Var& a, double da) {
    if (a.is_constant()) return Var(value);
    return push(value, a.index(), da, kNone, 0.0);
  }

  Var binary(double value, const Var& a, double da, const Var& b, double db) {
    const bool ca = a.is_constant();
    const bool cb = b.is_constant();
    if (ca && cb) return Var(value);
    if (ca) return push(value, b.index(), db, kNone, 0.0);
    if (cb) return push(value, a.index(), da, kNone, 0.0);
    return push(value, a.index(), da, b.index(), db);
  }

  /// Adjoints of every recorded node with respect to `output`.
  std::vector<double> gradient(const Var& output) const {
    std::vector<double> adjoint(nodes_.size(), 0.0);
    if (output.is_constant()) return adjoint;
    adjoint[output.index()] = 1.0;
    for (std::size_t i = output.index() + 1; i-- > 0;) {
      const double g = adjoint[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.parent[0] != kNone) adjoint[n.parent[0]] += g * n.partial[0];
      if (n.parent[1] != kNone) adjoint[n.parent[1]] += g * n.partial[1];
    }
    return adjoint;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  struct Node {
    std::uint32_t parent[2];
    double partial[2];
  };

  Var push(double value, std::uint32_t p0, double d0, std::uint32_t p1, double d1) {
    nodes_.push_back(Node{{p0, p1}, {d0, d1}});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape() ? a.tape() : b.tape(); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() + b.value());
  return t->binary(a.value() + b.value(), a, 1.0, b, 1.0);
}

inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() - b.value());
  return t->binary(a.value() - b.value(), a, 1.0, b, -1.0);
}

inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() * b.value());
  return t->binary(a.value() * b.value(), a, b.value(), b, a.value());
}

inline Var operator/(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double q = a.value() / b.value();
  if (!t) return Var(q);
  return t->binary(q, a, 1.0 / b.value(), b, -q / b.value());
}

inline Var operator-(const Var& a) {
  if (!a.tape()) return Var(-a.value());
  return a.tape()->unary(-a.value(), a, -1.0);
}

inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

namespace detail {
template <typename F, typename D>
Var apply(const Var& a, F f, D df) {
  const double v = f(a.value());
  if (!a.tape()) return Var(v);
  return a.tape()->unary(v, a, df(a.value(), v));
}
}  // namespace detail

inline Var log(const Var& a) {
  return detail::apply(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(const Var& a) {
  return detail::apply(a, [](double x) { return std::exp(x); }, [](double, double v) { return v; });
}

inline Var sqrt(const Var& a) {
  return detail::apply(a, [](double x) { return std::sqrt(x); }, [](double, double v) { return 0.5 / v; });
}

inline Var abs(const Var& a) {
  return detail::apply(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var lgamma(const Var& a) {
  return detail::apply(a, special::lgamma, [](double x, double) { return special::digamma(x); });
}

inline Var digamma(const Var& a) {
  return detail::apply(a, special::digamma, [](double x, double) { return special::trigamma(x); });
}

inline Var softplus(const Var& a) {
  return detail::apply(a, special::softplus, [](double x, double) { return special::sigmoid(x); });
}

inline double value_of(const Var& a) { return a.value(); }

}  // namespace evtraj::ad

namespace evtraj {

inline double value_of(double x) { return x; }
using ad::value_of;

}  // namespace evtraj
