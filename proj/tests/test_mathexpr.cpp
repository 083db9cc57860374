#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "qdiag/error.hpp"
#include "qdiag/mathexpr.hpp"
#include "rational_oracle.hpp"

namespace qdiag {
namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no qdiag::Error thrown";
  return ErrorCode::kInvariantViolation;
}

TEST(ExtractBoxed, LastOccurrenceWithNestedBraces) {
  EXPECT_EQ(extract_boxed("so $c = \\boxed{33}$"), "33");
  EXPECT_EQ(extract_boxed("\\boxed{\\frac{1}{2}}"), "\\frac{1}{2}");
  EXPECT_EQ(extract_boxed("first \\boxed{4} then \\boxed{5}"), "5");
  EXPECT_EQ(code_of([] { extract_boxed("the answer is 5"); }), ErrorCode::kNoBoxedAnswer);
  EXPECT_EQ(code_of([] { extract_boxed("\\boxed{\\frac{1}{2}"); }), ErrorCode::kUnbalancedBraces);
}

TEST(ExtractBoxed, PropertyBalancedContentRoundTrips) {
  std::mt19937_64 rng(7);
  const std::string alphabet = "ab12+-/ \\x^";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    int depth = 0;
    int len = static_cast<int>(rng() % 20);
    for (int i = 0; i < len; ++i) {
      auto r = rng() % 6;
      if (r == 0) {
        s += '{';
        ++depth;
      } else if (r == 1 && depth > 0) {
        s += '}';
        --depth;
      } else {
        s += alphabet[rng() % alphabet.size()];
      }
    }
    s.append(static_cast<std::size_t>(depth), '}');
    std::string prefix = trial % 2 ? "Step 1: x \\boxed{9} y " : "";
    EXPECT_EQ(extract_boxed(prefix + "\\boxed{" + s + "}"), s);
  }
}

TEST(ParseMathValue, Forms) {
  auto v = parse_math_value("\\frac{11}{2}");
  ASSERT_TRUE(v.is_rational());
  EXPECT_EQ(v.value, Rational(11, 2));
  EXPECT_EQ(parse_math_value("5E-01").value, Rational(1, 2));
  // -250/1000 reduces to -1/4.
  EXPECT_EQ(parse_math_value("-0.250").value, Rational(-1, 4));
  EXPECT_EQ(parse_math_value("$\\dfrac{3}{4}$.").value, Rational(3, 4));
  EXPECT_EQ(parse_math_value("1,000").value, Rational(1000));
  EXPECT_EQ(parse_math_value("2.5 \\times 10^{3}").value, Rational(2500));
  EXPECT_EQ(parse_math_value("3*10^2").value, Rational(300));
  EXPECT_EQ(parse_math_value("5 e -1").value, Rational(1, 2));
  EXPECT_EQ(parse_math_value("\\frac12").value, Rational(1, 2));
  EXPECT_EQ(parse_math_value("-\\frac{1}{3}").value, Rational(-1, 3));
  EXPECT_EQ(parse_math_value("{12}").value, Rational(12));

  auto sym = parse_math_value("x+1");
  EXPECT_FALSE(sym.is_rational());
  EXPECT_EQ(sym.canonical_text, "x+1");
  EXPECT_EQ(parse_math_value("  $ {x  +   1} $ ").canonical_text, "x + 1");
}

TEST(ParseMathValue, Errors) {
  EXPECT_EQ(code_of([] { parse_math_value("1/0"); }), ErrorCode::kDivisionByZero);
  EXPECT_EQ(code_of([] { parse_math_value("\\frac{3}{0}"); }), ErrorCode::kDivisionByZero);
  EXPECT_EQ(code_of([] { parse_math_value("   "); }), ErrorCode::kEmptyInput);
  EXPECT_EQ(code_of([] { parse_math_value("$$"); }), ErrorCode::kEmptyInput);
}

TEST(Equivalent, FormatVariants) {
  EXPECT_TRUE(equivalent("\\frac{11}{2}", "5.5"));
  EXPECT_TRUE(equivalent("1/2", "5 x 10^-1"));
  EXPECT_FALSE(equivalent("33", "35"));
  EXPECT_TRUE(equivalent("x", "x"));
  // Textual, not algebraic.
  EXPECT_FALSE(equivalent("x+1", "1+x"));
  EXPECT_FALSE(equivalent("2", "x"));
  auto r = check_equivalence("", "1");
  EXPECT_FALSE(r.equivalent);
  EXPECT_FALSE(r.diagnostics.empty());
  auto pi = check_equivalence("2\\pi", "2\\pi");
  EXPECT_TRUE(pi.equivalent);
  EXPECT_FALSE(pi.diagnostics.empty());
}

TEST(Equivalent, AllPairsOfHalf) {
  const std::vector<std::string> forms = {"1/2", "0.5", "\\frac{1}{2}", "5E-01", "5 x 10^-1"};
  for (const auto& a : forms) {
    for (const auto& b : forms) EXPECT_TRUE(equivalent(a, b)) << a << " vs " << b;
  }
}

TEST(Normalize, Idempotent) {
  for (std::string s : {"$ {x} $.", "{{ a   b }}", "\\dfrac{\\sqrt 2}{2}", "$$5$$", "  ", "{x}.{y}"}) {
    auto once = normalize_answer_text(s);
    EXPECT_EQ(normalize_answer_text(once), once) << s;
  }
}

TEST(CeilFraction, ExactDecimalRates) {
  EXPECT_EQ(ceil_fraction_of(0.02, 3366), 68u);
  EXPECT_EQ(ceil_fraction_of(0.02, 50), 1u);
  EXPECT_EQ(ceil_fraction_of(0.07, 100), 7u);
  EXPECT_EQ(ceil_fraction_of(1.0, 17), 17u);
}

TEST(Equivalent, RandomRationalsAgainstOracle) {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<long> numer(-1000000, 1000000);
  std::uniform_int_distribution<long> denom(1, 1000000);
  int failures = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    long q = denom(rng);
    if (trial % 2 == 0) {
      // Bias half the draws towards terminating decimals.
      long a = static_cast<long>(rng() % 7), b = static_cast<long>(rng() % 7);
      q = 1;
      for (long i = 0; i < a; ++i) q *= 2;
      for (long i = 0; i < b; ++i) q *= 5;
    }
    mpq_class expected = oracle::make_q(numer(rng), q);
    auto forms = oracle::renderings(expected);
    for (const auto& f : forms) {
      auto v = parse_math_value(f);
      if (!v.is_rational() || v.value.numerator().str() != expected.get_num().get_str() ||
          v.value.denominator().str() != expected.get_den().get_str()) {
        ++failures;
        ADD_FAILURE() << f << " parsed wrongly";
      }
    }
    for (std::size_t i = 0; i < forms.size(); ++i) {
      for (std::size_t j = i + 1; j < forms.size(); ++j) {
        if (!equivalent(forms[i], forms[j])) ++failures;
      }
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(Equivalent, RelationProperties) {
  std::mt19937_64 rng(99);
  const std::vector<std::string> pool = {"1/2", "0.5", "2/4", "x", "x ", "{x}", "y", "3", "3.0",
                                         "6/2", "\\frac{3}{1}", "1/3", "0.333"};
  for (int i = 0; i < 500; ++i) {
    const auto& a = pool[rng() % pool.size()];
    const auto& b = pool[rng() % pool.size()];
    const auto& c = pool[rng() % pool.size()];
    EXPECT_TRUE(equivalent(a, a));
    EXPECT_EQ(equivalent(a, b), equivalent(b, a));
    if (equivalent(a, b) && equivalent(b, c)) EXPECT_TRUE(equivalent(a, c));
  }
}

}  // namespace
}  // namespace qdiag
