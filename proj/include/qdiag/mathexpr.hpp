#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace qdiag {

using BigInt = boost::multiprecision::cpp_int;

/// Exact rational in lowest terms with a positive denominator.
class Rational {
 public:
  Rational() = default;
  explicit Rational(BigInt numerator, BigInt denominator = 1);

  const BigInt& numerator() const { return num_; }
  const BigInt& denominator() const { return den_; }

  /// "n" for integers, "n/d" otherwise.
  std::string to_string() const;

  friend bool operator==(const Rational&, const Rational&) = default;
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

  friend Rational operator*(const Rational& a, const Rational& b);

 private:
  BigInt num_ = 0;
  BigInt den_ = 1;
};

struct MathValue {
  enum class Kind { kRational, kSymbolic };

  Kind kind = Kind::kSymbolic;
  Rational value;              // kRational only
  std::string canonical_text;  // kSymbolic only

  static MathValue rational(Rational r) { return {Kind::kRational, std::move(r), {}}; }
  static MathValue symbolic(std::string text) { return {Kind::kSymbolic, {}, std::move(text)}; }

  bool is_rational() const { return kind == Kind::kRational; }
};

/// Content of the last \boxed{...} occurrence, nested braces preserved.
/// Throws NoBoxedAnswer or UnbalancedBraces.
std::string extract_boxed(std::string_view solution_text);

/// Surface normalization shared by numeric and symbolic parsing: trims,
/// strips enclosing $...$ and outer braces and a trailing period, collapses
/// whitespace, and spells \dfrac / \tfrac as \frac. Idempotent.
std::string normalize_answer_text(std::string_view text);

/// Integers, decimals, a/b, \frac{a}{b}, scientific notation and the
/// "a x 10^b" family become exact rationals; anything else is symbolic.
/// Throws EmptyInput or DivisionByZero.
MathValue parse_math_value(std::string_view text);

struct EquivalenceResult {
  bool equivalent = false;
  std::vector<std::string> diagnostics;

  explicit operator bool() const { return equivalent; }
};

/// Never throws; parse errors produce `false` plus a diagnostic.
EquivalenceResult check_equivalence(std::string_view a, std::string_view b);

inline bool equivalent(std::string_view a, std::string_view b) {
  return check_equivalence(a, b).equivalent;
}

/// ceil(fraction * n), exact for fractions given as short decimals
/// (0.02, 0.1, ...). Uses the shortest round-trip decimal form of `fraction`.
std::size_t ceil_fraction_of(double fraction, std::size_t n);

}  // namespace qdiag
