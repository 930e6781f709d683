#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iapnet/ingestion.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

inline constexpr const char* kMissingBin = "(missing)";

struct IapHistogram {
  std::string iap;
  std::string subset;
  // Observed values only: categories in schema order, continuous values in
  // ascending numeric order. Missing values land in a trailing kMissingBin.
  std::vector<std::pair<std::string, std::size_t>> bins;

  std::size_t total() const;
};

IapHistogram value_histogram(std::span<const SliceRecord> records, const std::string& iap, const IapSchema& schema,
                             const std::string& subset = "");

// Fractional ranks (1-based) with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks; nullopt when either column is
// constant. Throws MetricError on fewer than 2 values or mismatched lengths.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::optional<double>> values;  // row-major, nullopt = undefined

  std::size_t size() const { return names.size(); }
  const std::optional<double>& at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
  std::string to_json() const;
};

CorrelationMatrix spearman_matrix(const std::vector<std::vector<double>>& columns, std::vector<std::string> names);

// Categorical IAPs enter as class indices, continuous IAPs as their value.
// Throws MetricError on fewer than 2 records, EncodeError on missing values.
CorrelationMatrix spearman_matrix(std::span<const SliceRecord> records, const IapSchema& schema);

enum class CombinationMode { kAllIaps, kCategoricalOnly };

struct OverlapCounts {
  std::string a_name;
  std::string b_name;
  std::size_t only_a = 0;
  std::size_t only_b = 0;
  std::size_t both = 0;
};

// Counts over deduplicated IAP-value tuples; continuous values are compared
// exactly as stored. Throws SchemaError when a record lacks a schema IAP.
OverlapCounts combination_overlap(std::span<const SliceRecord> a, std::span<const SliceRecord> b,
                                  const IapSchema& schema, CombinationMode mode = CombinationMode::kAllIaps,
                                  const std::string& a_name = "A", const std::string& b_name = "B");

// Same, but refuses subsets encoded against different schemas.
OverlapCounts combination_overlap(std::span<const SliceRecord> a, const IapSchema& schema_a,
                                  std::span<const SliceRecord> b, const IapSchema& schema_b,
                                  CombinationMode mode = CombinationMode::kAllIaps);

std::string overlap_table(std::span<const OverlapCounts> rows);

}  // namespace iapnet
