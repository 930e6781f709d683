#include "iapnet/cohort_analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "iapnet/error.hpp"
#include "json.hpp"

namespace iapnet {

namespace {

double parse_value(const std::string& s, const std::string& iap) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw EncodeError("invalid value '" + s + "' for IAP '" + iap + "'");
  }
  return v;
}

const std::string* lookup(const SliceRecord& r, const std::string& iap) {
  auto it = r.iap_values.find(iap);
  return it == r.iap_values.end() ? nullptr : &it->second;
}

double numeric_column_value(const IapDescriptor& d, const SliceRecord& r) {
  const std::string* v = lookup(r, d.name);
  if (!v || v->empty()) throw EncodeError("missing value for IAP '" + d.name + "' in " + r.patient_id);
  if (d.is_categorical()) {
    auto it = std::find(d.categories.begin(), d.categories.end(), *v);
    if (it == d.categories.end()) throw EncodeError("unknown category '" + *v + "' for IAP '" + d.name + "'");
    return static_cast<double>(it - d.categories.begin());
  }
  return parse_value(*v, d.name);
}

}  // namespace

std::size_t IapHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [value, count] : bins) n += count;
  return n;
}

IapHistogram value_histogram(std::span<const SliceRecord> records, const std::string& iap, const IapSchema& schema,
                             const std::string& subset) {
  const auto& d = schema.descriptors()[schema.index_of(iap)];
  IapHistogram h;
  h.iap = iap;
  h.subset = subset;
  std::size_t missing = 0;
  if (d.is_categorical()) {
    std::vector<std::size_t> counts(d.categories.size(), 0);
    for (const auto& r : records) {
      const std::string* v = lookup(r, iap);
      if (!v || v->empty()) {
        ++missing;
        continue;
      }
      auto it = std::find(d.categories.begin(), d.categories.end(), *v);
      if (it == d.categories.end()) throw EncodeError("unknown category '" + *v + "' for IAP '" + iap + "'");
      ++counts[static_cast<std::size_t>(it - d.categories.begin())];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c]) h.bins.emplace_back(d.categories[c], counts[c]);
    }
  } else {
    std::map<double, std::pair<std::string, std::size_t>> by_value;
    for (const auto& r : records) {
      const std::string* v = lookup(r, iap);
      if (!v || v->empty()) {
        ++missing;
        continue;
      }
      auto& slot = by_value[parse_value(*v, iap)];
      if (slot.second == 0) slot.first = *v;
      ++slot.second;
    }
    for (auto& [value, bin] : by_value) h.bins.push_back(std::move(bin));
  }
  if (missing) h.bins.emplace_back(kMissingBin, missing);
  return h;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw MetricError("Spearman columns differ in length");
  if (x.size() < 2) throw MetricError("Spearman correlation needs at least 2 records");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;  // average ranks always sum to n(n+1)/2
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean, b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix spearman_matrix(const std::vector<std::vector<double>>& columns, std::vector<std::string> names) {
  if (columns.size() != names.size()) throw MetricError("column and name counts differ");
  const std::size_t k = columns.size();
  CorrelationMatrix m;
  m.names = std::move(names);
  m.values.assign(k * k, std::nullopt);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      auto rho = spearman(columns[i], columns[j]);
      if (i == j && rho) rho = 1.0;
      m.values[i * k + j] = rho;
      m.values[j * k + i] = rho;
    }
  }
  return m;
}

CorrelationMatrix spearman_matrix(std::span<const SliceRecord> records, const IapSchema& schema) {
  if (records.size() < 2) throw MetricError("Spearman correlation needs at least 2 records");
  std::vector<std::vector<double>> columns;
  std::vector<std::string> names;
  for (const auto& d : schema.descriptors()) {
    std::vector<double> col;
    col.reserve(records.size());
    for (const auto& r : records) col.push_back(numeric_column_value(d, r));
    columns.push_back(std::move(col));
    names.push_back(d.name);
  }
  return spearman_matrix(columns, std::move(names));
}

std::string CorrelationMatrix::to_json() const {
  nlohmann::ordered_json j;
  j["names"] = names;
  auto& rows = j["matrix"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < size(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < size(); ++c) {
      const auto& v = at(i, c);
      row.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("undefined"));
    }
    rows.push_back(std::move(row));
  }
  return j.dump(2);
}

namespace {

std::set<std::vector<std::string>> combinations(std::span<const SliceRecord> records, const IapSchema& schema,
                                                CombinationMode mode) {
  std::set<std::vector<std::string>> out;
  for (const auto& r : records) {
    std::vector<std::string> tuple;
    for (const auto& d : schema.descriptors()) {
      if (mode == CombinationMode::kCategoricalOnly && !d.is_categorical()) continue;
      const std::string* v = lookup(r, d.name);
      if (!v) throw SchemaError("record " + r.patient_id + " has no value for schema IAP '" + d.name + "'");
      tuple.push_back(*v);
    }
    out.insert(std::move(tuple));
  }
  return out;
}

}  // namespace

OverlapCounts combination_overlap(std::span<const SliceRecord> a, std::span<const SliceRecord> b,
                                  const IapSchema& schema, CombinationMode mode, const std::string& a_name,
                                  const std::string& b_name) {
  const auto sa = combinations(a, schema, mode);
  const auto sb = combinations(b, schema, mode);
  OverlapCounts c;
  c.a_name = a_name;
  c.b_name = b_name;
  for (const auto& t : sa) (sb.count(t) ? c.both : c.only_a) += 1;
  for (const auto& t : sb) {
    if (!sa.count(t)) ++c.only_b;
  }
  return c;
}

OverlapCounts combination_overlap(std::span<const SliceRecord> a, const IapSchema& schema_a,
                                  std::span<const SliceRecord> b, const IapSchema& schema_b, CombinationMode mode) {
  if (schema_a.fingerprint() != schema_b.fingerprint()) {
    throw SchemaError("subsets were encoded against different schemas (" + schema_a.fingerprint() + " vs " +
                      schema_b.fingerprint() + ")");
  }
  return combination_overlap(a, b, schema_a, mode);
}

std::string overlap_table(std::span<const OverlapCounts> rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-10s %18s %18s %10s\n", "A", "B", "Num. in A not B", "Num. in B not A",
                "In both");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %-10s %18zu %18zu %10zu\n", r.a_name.c_str(), r.b_name.c_str(), r.only_a,
                  r.only_b, r.both);
    out << line;
  }
  return out.str();
}

}  // namespace iapnet
