#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace qdiag {

/// Percentage held exactly in hundredths of a percent point, so table
/// values like 47.2 and 11.44 never drift through binary floating point.
class Percent {
 public:
  constexpr Percent() = default;

  static constexpr Percent from_hundredths(std::int64_t h) { return Percent(h); }
  static Percent from_double(double value);
  /// Exact parse of a decimal string such as "47.2"; throws InvalidArgument.
  static Percent parse(std::string_view text);

  /// numerator / denominator * 100, rounded half away from zero to 0.01.
  static Percent ratio(std::int64_t numerator, std::int64_t denominator);

  constexpr std::int64_t hundredths() const { return h_; }
  double to_double() const { return static_cast<double>(h_) / 100.0; }

  /// Always two decimals: "42.00".
  std::string fixed2() const;
  /// Shortest form with at least one decimal: 5.40 -> "5.4", 0 -> "0.0".
  std::string compact() const;

  friend constexpr Percent operator-(Percent a, Percent b) { return Percent(a.h_ - b.h_); }
  friend constexpr Percent operator-(Percent a) { return Percent(-a.h_); }
  friend constexpr auto operator<=>(Percent, Percent) = default;

 private:
  constexpr explicit Percent(std::int64_t h) : h_(h) {}
  std::int64_t h_ = 0;
};

/// Integer division rounding half away from zero.
std::int64_t div_round_half_away(std::int64_t numerator, std::int64_t denominator);

}  // namespace qdiag
