#pragma once

// Literal, set-based reading of the baseline-versus-majority decision rule,
// written independently of qdiag::apply_policy for cross-checking.

#include <map>
#include <optional>
#include <set>
#include <vector>

namespace qdiag::oracle {

enum class Verdict { kAccept, kFlag, kNoErrorRecheck };

struct Decision {
  Verdict verdict;
  int label;  // -1 when flagged
  bool operator==(const Decision&) const = default;
};

/// labels: one entry per judge (0..7, 7 = no_error); baseline: index into labels.
inline Decision decide(const std::vector<int>& labels, std::size_t baseline, int quorum,
                       bool baseline_wins_ties, int no_error_label) {
  std::map<int, int> count;
  for (int l : labels) count[l] += 1;
  int best = 0;
  for (auto& kv : count) best = kv.second > best ? kv.second : best;
  std::set<int> top;
  for (auto& kv : count) {
    if (kv.second == best) top.insert(kv.first);
  }
  int b = labels[baseline];

  std::optional<int> accepted;
  if (top.size() == 1 && *top.begin() == b) {
    accepted = b;                       // rule 1
  } else if (top.size() == 1 && best >= quorum) {
    accepted = *top.begin();            // rule 2
  } else if (top.size() > 1) {
    if (baseline_wins_ties && top.count(b)) accepted = b;  // rule 3
  }
  if (!accepted) return {Verdict::kFlag, -1};
  if (*accepted == no_error_label) return {Verdict::kNoErrorRecheck, *accepted};
  return {Verdict::kAccept, *accepted};
}

}  // namespace qdiag::oracle
