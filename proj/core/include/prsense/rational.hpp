#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "prsense/errors.hpp"

namespace prsense {

/// Exact rational on int64 with overflow-checked arithmetic. Always
/// normalized: den > 0, gcd(|num|, den) == 1.
struct Rational {
  long long num = 0;
  long long den = 1;

  Rational() = default;
  Rational(long long n) : num(n), den(1) {}
  Rational(long long n, long long d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) throw MalformedExpr("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  bool is_zero() const { return num == 0; }
  bool is_one() const { return num == 1 && den == 1; }
  bool is_integer() const { return den == 1; }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }

  std::string str() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
  }
};

namespace detail {

inline long long checked_narrow(__int128 v, const char* ctx) {
  if (v > INT64_MAX || v < INT64_MIN) throw NumericalError(std::string("rational overflow in ") + ctx);
  return static_cast<long long>(v);
}

}  // namespace detail

/// Throws NumericalError on int64 overflow; callers doing constant folding
/// catch it and keep the expression symbolic instead.
inline Rational rat_add(const Rational& a, const Rational& b) {
  __int128 n = static_cast<__int128>(a.num) * b.den + static_cast<__int128>(b.num) * a.den;
  __int128 d = static_cast<__int128>(a.den) * b.den;
  Rational r;
  r.num = detail::checked_narrow(n, "add");
  r.den = detail::checked_narrow(d, "add");
  r.normalize();
  return r;
}

inline Rational rat_mul(const Rational& a, const Rational& b) {
  __int128 n = static_cast<__int128>(a.num) * b.num;
  __int128 d = static_cast<__int128>(a.den) * b.den;
  Rational r;
  r.num = detail::checked_narrow(n, "mul");
  r.den = detail::checked_narrow(d, "mul");
  r.normalize();
  return r;
}

inline Rational rat_neg(const Rational& a) {
  Rational r;
  r.num = -a.num;
  r.den = a.den;
  return r;
}

inline Rational rat_sub(const Rational& a, const Rational& b) { return rat_add(a, rat_neg(b)); }

/// Exact conversion of a dyadic double (every finite double is one); throws
/// MalformedExpr when the exact form does not fit in int64.
inline Rational rational_from_double(double x) {
  if (!std::isfinite(x)) throw MalformedExpr("non-finite constant");
  if (x == 0.0) return Rational(0);
  int exp = 0;
  double m = std::frexp(x, &exp);  // x = m * 2^exp, |m| in [0.5, 1)
  // Scale mantissa to an integer (53 bits).
  long long mant = static_cast<long long>(std::ldexp(m, 53));
  exp -= 53;
  while (mant != 0 && (mant & 1) == 0) {
    mant >>= 1;
    ++exp;
  }
  if (exp >= 0) {
    if (exp > 62) throw MalformedExpr("constant too large for exact rational; use [\"rat\", p, q]");
    __int128 n = static_cast<__int128>(mant) << exp;
    return Rational(detail::checked_narrow(n, "from_double"), 1);
  }
  if (-exp > 62) throw MalformedExpr("constant not exactly representable; use [\"rat\", p, q]");
  return Rational(mant, 1LL << -exp);
}

}  // namespace prsense
