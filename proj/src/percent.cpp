#include "qdiag/percent.hpp"

#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/mathexpr.hpp"

namespace qdiag {

std::int64_t div_round_half_away(std::int64_t numerator, std::int64_t denominator) {
  if (denominator == 0) throw Error(ErrorCode::kDivisionByZero, "rounding division by zero");
  bool negative = (numerator < 0) != (denominator < 0);
  std::int64_t n = std::llabs(numerator);
  std::int64_t d = std::llabs(denominator);
  std::int64_t q = (2 * n + d) / (2 * d);
  return negative ? -q : q;
}

Percent Percent::from_double(double value) {
  return Percent(static_cast<std::int64_t>(std::llround(value * 100.0)));
}

Percent Percent::parse(std::string_view text) {
  MathValue v = parse_math_value(text);
  if (!v.is_rational()) throw Error(ErrorCode::kInvalidArgument, fmt::format("not a percentage: '{}'", text));
  BigInt scaled = v.value.numerator() * 100;
  const BigInt& den = v.value.denominator();
  BigInt q = (2 * boost::multiprecision::abs(scaled) + den) / (2 * den);
  if (scaled < 0) q = -q;
  return Percent(q.convert_to<std::int64_t>());
}

Percent Percent::ratio(std::int64_t numerator, std::int64_t denominator) {
  return Percent(div_round_half_away(numerator * 10000, denominator));
}

std::string Percent::fixed2() const {
  std::int64_t a = std::llabs(h_);
  return fmt::format("{}{}.{:02d}", h_ < 0 ? "-" : "", a / 100, a % 100);
}

std::string Percent::compact() const {
  std::int64_t a = std::llabs(h_);
  std::string sign = h_ < 0 ? "-" : "";
  if (a % 10 == 0) return fmt::format("{}{}.{}", sign, a / 100, (a % 100) / 10);
  return fmt::format("{}{}.{:02d}", sign, a / 100, a % 100);
}

}  // namespace qdiag
