#include <gtest/gtest.h>

#include <set>

#include "qdiag/error.hpp"
#include "qdiag/taxonomy.hpp"

namespace qdiag {
namespace {

TEST(Taxonomy, CategoryOf) {
  EXPECT_EQ(category_of(ErrorLabel::kComputationalError), ErrorCategory::kExecution);
  EXPECT_EQ(category_of(ErrorLabel::kLogicalReasoningError), ErrorCategory::kReasoning);
  EXPECT_FALSE(category_of(ErrorLabel::kNoError).has_value());
}

TEST(Taxonomy, MembershipIsAPartitionOfTheSevenLabels) {
  std::map<ErrorCategory, std::set<ErrorLabel>> members;
  for (ErrorLabel label : kAllLabels) {
    if (auto cat = category_of(label)) members[*cat].insert(label);
  }
  ASSERT_EQ(members.size(), 4u);
  std::size_t total = 0;
  for (const auto& [cat, labels] : members) total += labels.size();
  EXPECT_EQ(total, 7u);
  EXPECT_EQ(members[ErrorCategory::kConceptual],
            (std::set{ErrorLabel::kConceptualMisunderstanding, ErrorLabel::kContextualOversight}));
  EXPECT_EQ(members[ErrorCategory::kMethod],
            (std::set{ErrorLabel::kProceduralError, ErrorLabel::kFormulaRuleError}));
  EXPECT_EQ(members[ErrorCategory::kExecution],
            (std::set{ErrorLabel::kComputationalError, ErrorLabel::kSymbolicManipulationError}));
  EXPECT_EQ(members[ErrorCategory::kReasoning], (std::set{ErrorLabel::kLogicalReasoningError}));
}

TEST(Taxonomy, ParseLabel) {
  EXPECT_EQ(parse_error_label("Computational Error"), ErrorLabel::kComputationalError);
  EXPECT_EQ(parse_error_label("No Errors"), ErrorLabel::kNoError);
  EXPECT_EQ(parse_error_label("No Error"), ErrorLabel::kNoError);
  EXPECT_EQ(parse_error_label("  formula-rule_ERROR "), ErrorLabel::kFormulaRuleError);
  try {
    parse_error_label("banana");
    FAIL() << "expected UnknownLabel";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownLabel);
  }
  // A category is not a leaf label.
  EXPECT_THROW(parse_error_label("execution"), Error);
}

TEST(Taxonomy, DisplayNameAndKeyRoundTrip) {
  for (ErrorLabel label : kAllLabels) {
    EXPECT_EQ(parse_error_label(display_name(label)), label);
    EXPECT_EQ(parse_error_label(to_key(label)), label);
  }
}

TEST(Taxonomy, JsonExport) {
  Json doc = taxonomy_json();
  EXPECT_EQ(doc.size(), 8u);
  EXPECT_EQ(doc["computational_error"]["category"], "execution");
  EXPECT_TRUE(doc["no_error"]["category"].is_null());
}

}  // namespace
}  // namespace qdiag
