#include "qdiag/mathexpr.hpp"

#include <cctype>
#include <charconv>
#include <optional>

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/io.hpp"

namespace qdiag {

Rational::Rational(BigInt numerator, BigInt denominator)
    : num_(std::move(numerator)), den_(std::move(denominator)) {
  if (den_ == 0) throw Error(ErrorCode::kDivisionByZero, "zero denominator");
  if (den_ < 0) {
    num_ = -num_;
    den_ = -den_;
  }
  BigInt g = boost::multiprecision::gcd(num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
}

std::string Rational::to_string() const {
  if (den_ == 1) return num_.str();
  return num_.str() + "/" + den_.str();
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
  BigInt lhs = a.num_ * b.den_;
  BigInt rhs = b.num_ * a.den_;
  if (lhs < rhs) return std::strong_ordering::less;
  if (lhs > rhs) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

Rational operator*(const Rational& a, const Rational& b) {
  return Rational(a.num_ * b.num_, a.den_ * b.den_);
}

std::string extract_boxed(std::string_view text) {
  constexpr std::string_view marker = "\\boxed{";
  auto pos = text.rfind(marker);
  if (pos == std::string_view::npos) throw Error(ErrorCode::kNoBoxedAnswer, "no \\boxed{ marker");
  std::size_t start = pos + marker.size();
  int depth = 1;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (text[i] == '{') {
      ++depth;
    } else if (text[i] == '}') {
      if (--depth == 0) return std::string(text.substr(start, i - start));
    }
  }
  throw Error(ErrorCode::kUnbalancedBraces, "\\boxed{ never closes");
}

namespace {

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Index of the brace closing the one at `open`, or npos.
std::size_t matching_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool in_ws = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out += ' ';
    in_ws = false;
    out += c;
  }
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string normalize_once(std::string s) {
  s = collapse_whitespace(s);
  s = replace_all(std::move(s), "\\dfrac", "\\frac");
  s = replace_all(std::move(s), "\\tfrac", "\\frac");
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    s = s.substr(1, s.size() - 2);
  } else if (starts_with(s, "\\(") && s.size() >= 4 && s.substr(s.size() - 2) == "\\)") {
    s = s.substr(2, s.size() - 4);
  } else if (!s.empty() && s.front() == '{' && matching_brace(s, 0) == s.size() - 1) {
    s = s.substr(1, s.size() - 2);
  } else if (!s.empty() && s.back() == '.') {
    s.pop_back();
  }
  return trim(s);
}

// Recursive-descent recognizer over the numeric surface forms. Any failure
// to consume the whole input means "not numeric".
class NumberScanner {
 public:
  explicit NumberScanner(std::string_view s) : s_(s) {}

  std::optional<Rational> parse_all() {
    auto r = value();
    skip_ws();
    if (!r || pos_ != s_.size()) return std::nullopt;
    return r;
  }

 private:
  static constexpr int kMaxExponent = 4096;

  std::string_view s_;
  std::size_t pos_ = 0;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool consume(std::string_view lit) {
    if (starts_with(s_.substr(pos_), lit)) {
      pos_ += lit.size();
      return true;
    }
    return false;
  }

  int sign() {
    skip_ws();
    int sgn = 1;
    while (peek() == '+' || peek() == '-') {
      if (peek() == '-') sgn = -sgn;
      ++pos_;
      skip_ws();
    }
    return sgn;
  }

  std::optional<Rational> value() {
    int sgn = sign();
    auto body = frac();
    if (!body) body = number_expr();
    if (!body) return std::nullopt;
    return sgn < 0 ? Rational(-body->numerator(), body->denominator()) : *body;
  }

  std::optional<Rational> frac() {
    if (!consume("\\frac")) return std::nullopt;
    skip_ws();
    if (peek() == '{') {
      auto num = group();
      skip_ws();
      auto den = group();
      if (!num || !den) return std::nullopt;
      return divide(*num, *den);
    }
    // \frac12 shorthand: two single digits.
    if (pos_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])) &&
        std::isdigit(static_cast<unsigned char>(s_[pos_ + 1]))) {
      BigInt n = s_[pos_] - '0';
      BigInt d = s_[pos_ + 1] - '0';
      pos_ += 2;
      return Rational(n, d);
    }
    return std::nullopt;
  }

  std::optional<Rational> group() {
    if (peek() != '{') return std::nullopt;
    std::size_t close = matching_brace(s_, pos_);
    if (close == std::string_view::npos) return std::nullopt;
    NumberScanner inner(s_.substr(pos_ + 1, close - pos_ - 1));
    pos_ = close + 1;
    return inner.parse_all();
  }

  static Rational divide(const Rational& a, const Rational& b) {
    if (b.numerator() == 0) throw Error(ErrorCode::kDivisionByZero, "zero denominator");
    return Rational(a.numerator() * b.denominator(), a.denominator() * b.numerator());
  }

  std::optional<Rational> number_expr() {
    auto base = decimal();
    if (!base) return std::nullopt;
    std::size_t mark = pos_;
    skip_ws();
    if (peek() == '/') {
      ++pos_;
      int sgn = sign();
      auto den = decimal();
      if (!den) return std::nullopt;
      if (sgn < 0) den = Rational(-den->numerator(), den->denominator());
      return divide(*base, *den);
    }
    if (auto exp = exponent()) return *base * pow10(*exp);
    pos_ = mark;
    return base;
  }

  // Either [eE]<int> or (x|X|*|\times|\cdot|×) 10^<int> / 10^{<int>}.
  std::optional<long> exponent() {
    std::size_t mark = pos_;
    if (peek() == 'e' || peek() == 'E') {
      ++pos_;
      skip_ws();
      if (auto e = signed_int()) return e;
      pos_ = mark;
      return std::nullopt;
    }
    if (consume("\\times") || consume("\\cdot") || consume("×") || consume("x") ||
        consume("X") || consume("*")) {
      skip_ws();
      if (consume("10")) {
        skip_ws();
        if (consume("^")) {
          skip_ws();
          if (peek() == '{') {
            std::size_t close = matching_brace(s_, pos_);
            if (close != std::string_view::npos) {
              NumberScanner inner(s_.substr(pos_ + 1, close - pos_ - 1));
              auto e = inner.signed_int();
              inner.skip_ws();
              if (e && inner.eof()) {
                pos_ = close + 1;
                return e;
              }
            }
          } else if (auto e = signed_int()) {
            return e;
          }
        }
      }
    }
    pos_ = mark;
    return std::nullopt;
  }

  std::optional<long> signed_int() {
    int sgn = 1;
    if (peek() == '+' || peek() == '-') {
      sgn = peek() == '-' ? -1 : 1;
      ++pos_;
      skip_ws();
    }
    std::size_t start = pos_;
    while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    if (pos_ == start) return std::nullopt;
    long v = 0;
    auto digits = s_.substr(start, pos_ - start);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc{} || v > kMaxExponent) return std::nullopt;
    return sgn * v;
  }

  static Rational pow10(long e) {
    BigInt p = boost::multiprecision::pow(BigInt(10), static_cast<unsigned>(e < 0 ? -e : e));
    return e < 0 ? Rational(1, p) : Rational(p, 1);
  }

  std::optional<Rational> decimal() {
    std::size_t start = pos_;
    std::string digits;
    while (std::isdigit(static_cast<unsigned char>(peek()))) digits += s_[pos_++];
    std::size_t scale = 0;
    if (peek() == '.') {
      std::size_t dot = pos_++;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        digits += s_[pos_++];
        ++scale;
      }
      if (digits.empty()) {
        pos_ = dot;
        return std::nullopt;
      }
    }
    if (digits.empty()) {
      pos_ = start;
      return std::nullopt;
    }
    // cpp_int reads a leading 0 as an octal prefix.
    auto nz = digits.find_first_not_of('0');
    digits = nz == std::string::npos ? "0" : digits.substr(nz);
    BigInt den = boost::multiprecision::pow(BigInt(10), static_cast<unsigned>(scale));
    return Rational(BigInt(digits), den);
  }
};

// "1,234,567.5" -> "1234567.5"; anything else unchanged.
std::string strip_thousands(const std::string& s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
  std::size_t lead = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    ++i;
    ++lead;
  }
  if (lead == 0 || lead > 3 || i >= s.size() || s[i] != ',') return s;
  while (i < s.size() && s[i] == ',') {
    ++i;
    for (int k = 0; k < 3; ++k, ++i) {
      if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) return s;
    }
  }
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  }
  if (i != s.size()) return s;
  std::string out;
  for (char c : s) {
    if (c != ',') out += c;
  }
  return out;
}

bool needs_audit(std::string_view text) {
  return text.find("\\pi") != std::string_view::npos ||
         text.find("\\sqrt") != std::string_view::npos ||
         text.find("π") != std::string_view::npos ||
         text.find("√") != std::string_view::npos ||
         (!text.empty() && std::isdigit(static_cast<unsigned char>(text.front())) &&
          text.find("\\frac") != std::string_view::npos);
}

}  // namespace

std::string normalize_answer_text(std::string_view text) {
  std::string s = trim(text);
  while (true) {
    std::string next = normalize_once(s);
    if (next == s) return s;
    s = std::move(next);
  }
}

MathValue parse_math_value(std::string_view text) {
  std::string norm = normalize_answer_text(text);
  if (norm.empty()) throw Error(ErrorCode::kEmptyInput, "blank answer");
  const std::string numeric = strip_thousands(norm);
  NumberScanner scanner(numeric);
  if (auto r = scanner.parse_all()) return MathValue::rational(std::move(*r));
  return MathValue::symbolic(std::move(norm));
}

EquivalenceResult check_equivalence(std::string_view a, std::string_view b) {
  EquivalenceResult result;
  MathValue va, vb;
  try {
    va = parse_math_value(a);
    vb = parse_math_value(b);
  } catch (const Error& e) {
    result.diagnostics.push_back(e.what());
    return result;
  }
  if (va.kind != vb.kind) {
    result.diagnostics.push_back(
        fmt::format("kind mismatch: '{}' vs '{}'", normalize_answer_text(a), normalize_answer_text(b)));
    return result;
  }
  if (va.is_rational()) {
    result.equivalent = va.value == vb.value;
    return result;
  }
  result.equivalent = va.canonical_text == vb.canonical_text;
  for (const auto* v : {&va, &vb}) {
    if (needs_audit(v->canonical_text)) {
      result.diagnostics.push_back(
          fmt::format("symbolic answer '{}' compared textually; audit manually", v->canonical_text));
    }
  }
  return result;
}

std::size_t ceil_fraction_of(double fraction, std::size_t n) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, fraction);
  if (ec != std::errc{}) throw Error(ErrorCode::kInvalidArgument, "unrepresentable fraction");
  MathValue v = parse_math_value(std::string_view(buf, static_cast<std::size_t>(end - buf)));
  if (!v.is_rational()) throw Error(ErrorCode::kInvalidArgument, "non-numeric fraction");
  BigInt scaled = v.value.numerator() * BigInt(n);
  const BigInt& den = v.value.denominator();
  BigInt q = scaled / den;
  if (q * den < scaled) ++q;
  return q.convert_to<std::size_t>();
}

}  // namespace qdiag
