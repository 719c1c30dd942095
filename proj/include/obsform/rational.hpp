#pragma once

#include <cstdint>
#include <numeric>
#include <string>

namespace obsform {

/// Rational exponent p/q in lowest terms with q >= 1.
struct Rational {
  long long num = 0;
  long long den = 1;

  Rational() = default;
  Rational(long long p, long long q = 1) : num(p), den(q) { normalize(); }

  void normalize() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    if (num == 0) den = 1;
  }

  bool is_integer() const { return den == 1; }
  bool is_zero() const { return num == 0; }
  bool is_one() const { return num == 1 && den == 1; }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend Rational operator+(Rational a, Rational b) {
    return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
  }
  friend Rational operator-(Rational a, Rational b) {
    return Rational(a.num * b.den - b.num * a.den, a.den * b.den);
  }
  friend Rational operator*(Rational a, Rational b) {
    return Rational(a.num * b.num, a.den * b.den);
  }
  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }

  std::string str() const {
    if (is_integer()) return std::to_string(num);
    return "(" + std::to_string(num) + "/" + std::to_string(den) + ")";
  }
};

}  // namespace obsform
