#include "qdiag/reporting.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "qdiag/error.hpp"

namespace qdiag {

std::vector<Percent> percent_shares(std::span<const std::size_t> counts) {
  std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::vector<Percent> out(counts.size());
  if (total == 0) return out;
  std::vector<std::int64_t> h(counts.size());
  std::vector<std::size_t> idx(counts.size());
  std::int64_t given = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    h[i] = static_cast<std::int64_t>(counts[i] * 10000 / total);
    given += h[i];
    idx[i] = i;
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] * 10000 % total > counts[b] * 10000 % total;
  });
  for (std::size_t k = 0; given < 10000; ++k, ++given) h[idx[k]] += 1;
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = Percent::from_hundredths(h[i]);
  return out;
}

GroupBy parse_group_by(std::string_view text) {
  GroupBy g;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string part = trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (part == "scale" || part == "model_scale") {
      g.model_scale = true;
    } else if (part == "quant" || part == "quant_method") {
      g.quant_method = true;
    } else if (!part.empty() && part != "none") {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown grouping key '{}'", part));
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return g;
}

namespace {

Json count_share_json(const CountShare& cs) { return Json{{"count", cs.count}, {"share", cs.share.fixed2()}}; }

template <typename Key>
void fill_shares(std::map<Key, CountShare>& m) {
  std::vector<std::size_t> counts;
  for (const auto& [k, cs] : m) counts.push_back(cs.count);
  auto shares = percent_shares(counts);
  std::size_t i = 0;
  for (auto& [k, cs] : m) cs.share = shares[i++];
}

ModelScale scale_of(const std::map<std::string, ModelScale>& scales, const std::string& model_id) {
  auto it = scales.find(model_id);
  if (it == scales.end()) throw Error(ErrorCode::kConfigError, fmt::format("no scale for model {}", model_id));
  return it->second;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void to_json(Json& j, const DistributionReport& r) {
  Json cats = Json::object();
  for (const auto& [c, cs] : r.by_category) cats[std::string(to_key(c))] = count_share_json(cs);
  Json labels = Json::object();
  for (const auto& [l, cs] : r.by_label) labels[std::string(to_key(l))] = count_share_json(cs);
  j = Json{{"model_scale", r.model_scale ? Json(std::string(to_key(*r.model_scale))) : Json(nullptr)},
           {"quant_method", r.quant_method ? Json(std::string(to_key(*r.quant_method))) : Json(nullptr)},
           {"by_category", cats},
           {"by_label", labels},
           {"total", r.total},
           {"unresolved", r.unresolved}};
}

std::vector<DistributionReport> error_distribution(std::span<const ConsensusOutcome> outcomes, GroupBy group_by,
                                                   const std::map<std::string, ModelScale>& scales) {
  using Key = std::pair<std::optional<ModelScale>, std::optional<QuantMethod>>;
  std::map<Key, DistributionReport> groups;
  if (!group_by.model_scale && !group_by.quant_method) groups[{}];
  for (const ConsensusOutcome& o : outcomes) {
    Key key;
    if (group_by.model_scale) key.first = scale_of(scales, o.model_id);
    if (group_by.quant_method) key.second = o.quant_method;
    DistributionReport& r = groups[key];
    r.model_scale = key.first;
    r.quant_method = key.second;
    if (o.status == OutcomeStatus::kFlagged) {
      ++r.unresolved;
      continue;
    }
    if (o.status != OutcomeStatus::kAccepted || !o.final_label || *o.final_label == ErrorLabel::kNoError) continue;
    ++r.by_label[*o.final_label].count;
    ++r.by_category[*category_of(*o.final_label)].count;
    ++r.total;
  }
  std::vector<DistributionReport> out;
  for (auto& [key, r] : groups) {
    if (r.total > 0) {
      for (ErrorCategory c : kAllCategories) r.by_category[c];
      for (ErrorLabel l : kErrorLabels) r.by_label[l];
      fill_shares(r.by_category);
      fill_shares(r.by_label);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string distribution_csv(std::span<const DistributionReport> reports) {
  std::string out = "model_scale,quant_method,kind,key,count,share\n";
  for (const auto& r : reports) {
    std::string scale = r.model_scale ? std::string(to_key(*r.model_scale)) : "all";
    std::string quant = r.quant_method ? std::string(to_key(*r.quant_method)) : "all";
    for (const auto& [c, cs] : r.by_category) {
      out += fmt::format("{},{},category,{},{},{}\n", scale, quant, to_key(c), cs.count, cs.share.fixed2());
    }
    for (const auto& [l, cs] : r.by_label) {
      out += fmt::format("{},{},label,{},{},{}\n", scale, quant, to_key(l), cs.count, cs.share.fixed2());
    }
  }
  return out;
}

void to_json(Json& j, const TableEntry& e) {
  j = Json{{"model_id", e.model_id}, {"variant", e.variant}, {"score", e.score.compact()}, {"reference", e.reference}};
}

void from_json(const Json& j, TableEntry& e) {
  e.model_id = j.at("model_id").get<std::string>();
  e.variant = j.at("variant").get<std::string>();
  const Json& s = j.at("score");
  e.score = s.is_string() ? Percent::parse(s.get<std::string>()) : Percent::from_double(s.get<double>());
  e.reference = j.value("reference", false);
}

std::vector<TableEntry> entries_from_reports(std::span<const ScoreReport> reports) {
  std::vector<TableEntry> out;
  for (const auto& r : reports) {
    out.push_back({r.model_id, std::string(to_key(r.quant_method)), r.accuracy, r.quant_method == QuantMethod::kBf16});
  }
  return out;
}

ComparisonTable comparison_table(std::span<const TableEntry> entries) {
  std::map<std::string, Percent> reference;
  for (const auto& e : entries) {
    if (e.reference) reference.emplace(e.model_id, e.score);
  }
  ComparisonTable t;
  for (const auto& e : entries) {
    TableRow row{e.model_id, e.variant, e.score.compact(), "-"};
    if (!e.reference) {
      auto ref = reference.find(e.model_id);
      if (ref == reference.end()) throw Error(ErrorCode::kMissingBaseline, fmt::format("no reference for {}", e.model_id));
      row.delta = degradation_delta(ref->second, e.score).render();
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Json ComparisonTable::to_json() const {
  Json rows_json = Json::array();
  for (const auto& r : rows) {
    rows_json.push_back(Json{{"model_id", r.model_id}, {"variant", r.variant}, {"score", r.score}, {"delta", r.delta}});
  }
  return Json{{"rows", rows_json}};
}

std::string ComparisonTable::to_csv() const {
  std::string out = "model_id,variant,score,delta\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{}\n", csv_field(r.model_id), csv_field(r.variant), r.score, csv_field(r.delta));
  }
  return out;
}

RadarMatrix radar_matrix(std::span<const ConsensusOutcome> outcomes, std::span<const ModelScale> scales_shown,
                         const std::map<std::string, ModelScale>& scales) {
  if (scales_shown.empty()) throw Error(ErrorCode::kInvalidArgument, "radar matrix needs at least one scale");
  auto reports = error_distribution(outcomes, GroupBy{true, false}, scales);
  RadarMatrix m;
  for (ModelScale s : scales_shown) {
    RadarRow row;
    row.model_scale = s;
    for (ErrorCategory c : kAllCategories) row.shares[c] = Percent();
    for (const auto& r : reports) {
      if (r.model_scale != s) continue;
      row.total = r.total;
      for (const auto& [c, cs] : r.by_category) row.shares[c] = cs.share;
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

Json RadarMatrix::to_json() const {
  Json cols = Json::array();
  for (ErrorCategory c : kAllCategories) cols.push_back(std::string(to_key(c)));
  Json rows_json = Json::array();
  for (const auto& r : rows) {
    Json values = Json::array();
    for (ErrorCategory c : kAllCategories) values.push_back(r.shares.at(c).fixed2());
    rows_json.push_back(Json{{"model_scale", to_key(r.model_scale)}, {"total", r.total}, {"shares", values}});
  }
  return Json{{"columns", cols}, {"rows", rows_json}};
}

std::string RadarMatrix::to_csv() const {
  std::string out = "model_scale,total";
  for (ErrorCategory c : kAllCategories) out += fmt::format(",{}", to_key(c));
  out += "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{}", to_key(r.model_scale), r.total);
    for (ErrorCategory c : kAllCategories) out += "," + r.shares.at(c).fixed2();
    out += "\n";
  }
  return out;
}

}  // namespace qdiag
