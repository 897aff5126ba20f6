#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>

#include "freqnet/errors.hpp"

namespace freqnet {

// Exact non-negative decimal threshold used in frequency comparisons.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  // Parses "12", "0.05", "1e-3", "-1.5".
  static Rational parse_decimal(std::string_view text) {
    std::string_view s = text;
    bool negative = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
      negative = s.front() == '-';
      s.remove_prefix(1);
    }
    std::int64_t exponent = 0;
    if (auto e = s.find_first_of("eE"); e != std::string_view::npos) {
      auto exp_text = s.substr(e + 1);
      if (!exp_text.empty() && exp_text.front() == '+') exp_text.remove_prefix(1);
      auto [p, ec] = std::from_chars(exp_text.data(), exp_text.data() + exp_text.size(), exponent);
      if (ec != std::errc() || p != exp_text.data() + exp_text.size())
        throw ModelError("malformed number '" + std::string(text) + "'");
      s = s.substr(0, e);
    }
    __int128 mantissa = 0;
    int digits = 0;
    bool seen_point = false;
    bool any = false;
    for (char c : s) {
      if (c == '.') {
        if (seen_point) throw ModelError("malformed number '" + std::string(text) + "'");
        seen_point = true;
        continue;
      }
      if (c < '0' || c > '9') throw ModelError("malformed number '" + std::string(text) + "'");
      any = true;
      mantissa = mantissa * 10 + (c - '0');
      if (seen_point) ++digits;
      if (mantissa > static_cast<__int128>(1) << 100)
        throw ModelError("number '" + std::string(text) + "' has too many digits");
    }
    if (!any) throw ModelError("malformed number '" + std::string(text) + "'");
    std::int64_t scale = exponent - digits;
    __int128 den = 1;
    while (scale > 0) {
      mantissa *= 10;
      --scale;
    }
    while (scale < 0) {
      den *= 10;
      ++scale;
    }
    __int128 g = gcd128(mantissa, den);
    if (g > 1) {
      mantissa /= g;
      den /= g;
    }
    constexpr __int128 kMax = static_cast<__int128>(INT64_MAX);
    if (mantissa > kMax || den > kMax)
      throw ModelError("number '" + std::string(text) + "' out of exact range");
    Rational r;
    r.num = static_cast<std::int64_t>(negative ? -mantissa : mantissa);
    r.den = static_cast<std::int64_t>(den);
    return r;
  }

  // Nearest decimal with up to 15 significant digits.
  static Rational from_double(double v) {
    if (!std::isfinite(v)) throw ModelError("non-finite threshold");
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 15);
    (void)ec;
    return parse_decimal(std::string_view(buf, static_cast<size_t>(p - buf)));
  }

  std::string to_string() const {
    if (den == 1) return std::to_string(num);
    // Decimal expansion terminates when den only has factors 2 and 5.
    std::int64_t d = den;
    int twos = 0, fives = 0;
    while (d % 2 == 0) d /= 2, ++twos;
    while (d % 5 == 0) d /= 5, ++fives;
    if (d != 1) {
      char buf[64];
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value());
      (void)ec;
      return std::string(buf, p);
    }
    int places = std::max(twos, fives);
    __int128 scaled = static_cast<__int128>(num < 0 ? -num : num);
    __int128 scale_den = den;
    __int128 pow10 = 1;
    for (int i = 0; i < places; ++i) pow10 *= 10;
    scaled = scaled * (pow10 / scale_den);
    std::string digits;
    if (scaled == 0) digits = "0";
    while (scaled > 0) {
      digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(scaled % 10)));
      scaled /= 10;
    }
    while (static_cast<int>(digits.size()) <= places) digits.insert(digits.begin(), '0');
    digits.insert(digits.end() - places, '.');
    return (num < 0 ? "-" : "") + digits;
  }

  friend bool operator==(const Rational& a, const Rational& b) { return a.num == b.num && a.den == b.den; }

 private:
  static __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  void normalize() {
    if (den == 0) throw ModelError("zero denominator");
    if (den < 0) num = -num, den = -den;
    std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) num /= g, den /= g;
  }
};

}  // namespace freqnet
