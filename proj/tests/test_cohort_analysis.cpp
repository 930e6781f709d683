#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "iapnet/cohort_analysis.hpp"
#include "iapnet/error.hpp"
#include "iapnet/random.hpp"
#include "json.hpp"

using namespace iapnet;

namespace {

IapSchema small_schema() {
  return build_schema({{"manufacturer", IapKind::kCategorical, {"GE", "Siemens"}},
                       {"flip_angle", IapKind::kCategorical, {"8", "10", "12"}},
                       {"te", IapKind::kContinuous, {}, "ms"}});
}

SliceRecord record(const std::string& patient, int slice, ValueMap values) {
  SliceRecord r;
  r.patient_id = patient;
  r.slice_index = slice;
  r.image_path = "x.png";
  r.iap_values = std::move(values);
  return r;
}

std::vector<SliceRecord> random_records(const IapSchema& schema, std::size_t n, Rng& rng, std::size_t te_levels) {
  std::vector<SliceRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ValueMap v;
    for (const auto& d : schema.descriptors()) {
      v[d.name] = d.is_categorical() ? d.categories[uniform_index(rng, d.categories.size())]
                                     : format_double(1.25 + 0.1 * static_cast<double>(uniform_index(rng, te_levels)));
    }
    out.push_back(record("P" + std::to_string(i), 0, v));
  }
  return out;
}

// Ranks by counting: rank = 1 + #less + (#equal - 1) / 2.
std::vector<double> counting_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// Classic formula, valid without ties.
double rank_formula(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = counting_ranks(x), ry = counting_ranks(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = static_cast<double>(x.size());
  return 1 - 6 * d2 / (n * (n * n - 1));
}

using Tuple = std::vector<std::string>;

std::set<Tuple> tuples(const std::vector<SliceRecord>& recs, const IapSchema& schema, bool categorical_only) {
  std::set<Tuple> s;
  for (const auto& r : recs) {
    Tuple t;
    for (const auto& d : schema.descriptors()) {
      if (!categorical_only || d.is_categorical()) t.push_back(r.iap_values.at(d.name));
    }
    s.insert(t);
  }
  return s;
}

}  // namespace

TEST(Ranks, AverageTies) {
  const std::vector<double> x{10, 20, 20, 5, 20};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{2, 4, 4, 1, 4}));
}

TEST(Spearman, FixedExample) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  // d = (-1, 1, -1, 1, 0): sum d^2 = 4, rho = 1 - 24 / 120.
  EXPECT_DOUBLE_EQ(rank_formula(x, y), 0.8);
  EXPECT_NEAR(*spearman(x, y), rank_formula(x, y), 1e-12);
}

TEST(Spearman, MonotoneColumns) {
  const std::vector<double> x{1, 2, 3, 4, 5, 6}, up{-3, 0, 1, 7, 8, 100}, down{9, 8, 5, 4, 0, -1};
  EXPECT_NEAR(*spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(*spearman(x, down), -1.0, 1e-12);
  const std::vector<double> flat(6, 2.0);
  EXPECT_FALSE(spearman(x, flat).has_value());
  EXPECT_THROW(spearman(std::vector<double>{1.0}, std::vector<double>{2.0}), MetricError);
  EXPECT_THROW(spearman(x, std::vector<double>{1.0, 2.0}), MetricError);
}

TEST(Spearman, MatrixMatchesBruteForceOnRandomTables) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cols = 12;
    std::vector<std::vector<double>> columns(cols, std::vector<double>(50));
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cols; ++c) {
      names.push_back("c" + std::to_string(c));
      // Half the columns are small-integer (tied), half continuous.
      for (auto& v : columns[c]) v = c % 2 ? std::floor(uniform(rng, 0, 5)) : normal(rng);
    }
    const auto m = spearman_matrix(columns, names);
    for (std::size_t i = 0; i < cols; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const auto expected = pearson(counting_ranks(columns[i]), counting_ranks(columns[j]));
        ASSERT_EQ(m.at(i, j).has_value(), expected.has_value());
        EXPECT_NEAR(*m.at(i, j), *expected, 1e-9);
        if (i % 2 == 0 && j % 2 == 0) EXPECT_NEAR(*m.at(i, j), rank_formula(columns[i], columns[j]), 1e-9);
        EXPECT_NEAR(*m.at(i, j), *m.at(j, i), 1e-12);
        EXPECT_LE(std::abs(*m.at(i, j)), 1.0);
      }
      EXPECT_EQ(*m.at(i, i), 1.0);
    }
  }
}

TEST(Spearman, RecordMatrixUsesClassIndicesAndFlagsConstants) {
  const auto schema = small_schema();
  std::vector<SliceRecord> recs;
  const char* fa[] = {"8", "10", "12", "12"};
  const char* te[] = {"1.3", "1.9", "2.5", "2.6"};
  for (int i = 0; i < 4; ++i) {
    recs.push_back(record("P" + std::to_string(i), 0, {{"manufacturer", "GE"}, {"flip_angle", fa[i]}, {"te", te[i]}}));
  }
  const auto m = spearman_matrix(recs, schema);
  EXPECT_EQ(m.names, (std::vector<std::string>{"manufacturer", "flip_angle", "te"}));
  EXPECT_FALSE(m.at(0, 0).has_value());
  EXPECT_FALSE(m.at(0, 2).has_value());
  const auto expected = pearson(counting_ranks({0, 1, 2, 2}), counting_ranks({1.3, 1.9, 2.5, 2.6}));
  EXPECT_NEAR(*m.at(1, 2), *expected, 1e-12);
  const auto j = nlohmann::json::parse(m.to_json());
  EXPECT_EQ(j.dump().find("undefined") != std::string::npos, true);

  const std::vector<SliceRecord> one(recs.begin(), recs.begin() + 1);
  EXPECT_THROW(spearman_matrix(one, schema), MetricError);
  recs[0].iap_values["te"] = "";
  EXPECT_THROW(spearman_matrix(recs, schema), EncodeError);
}

TEST(Spearman, InvariantUnderIncreasingTransformOfContinuousColumn) {
  const auto schema = small_schema();
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto recs = random_records(schema, 50, rng, 12);
    const auto before = spearman_matrix(recs, schema);
    for (auto& r : recs) {
      const double v = std::stod(r.iap_values["te"]);
      r.iap_values["te"] = format_double(std::exp(3 * v) + v * v * v);
    }
    const auto after = spearman_matrix(recs, schema);
    for (std::size_t i = 0; i < before.values.size(); ++i) {
      ASSERT_EQ(before.values[i].has_value(), after.values[i].has_value());
      if (before.values[i]) EXPECT_NEAR(*before.values[i], *after.values[i], 1e-12);
    }
  }
}

TEST(Histogram, Examples) {
  const auto schema = small_schema();
  std::vector<SliceRecord> ge;
  for (int i = 0; i < 10; ++i) ge.push_back(record("P", i, {{"manufacturer", "GE"}, {"flip_angle", "8"}, {"te", "2"}}));
  const auto h = value_histogram(ge, "manufacturer", schema, "train");
  ASSERT_EQ(h.bins.size(), 1u);
  EXPECT_EQ(h.bins[0], (std::pair<std::string, std::size_t>{"GE", 10}));
  EXPECT_EQ(h.subset, "train");
  EXPECT_TRUE(value_histogram(std::vector<SliceRecord>{}, "te", schema).bins.empty());
  EXPECT_THROW(value_histogram(ge, "scanner_model", schema), SchemaError);
}

TEST(Histogram, SeededMixMatchesTally) {
  const auto schema = small_schema();
  Rng rng(3);
  std::vector<SliceRecord> recs;
  std::map<std::string, std::size_t> tally;
  for (int i = 0; i < 300; ++i) {
    const std::string m = uniform01(rng) < 0.7 ? "GE" : "Siemens";
    const std::string te = format_double(1.25 + 0.25 * static_cast<double>(uniform_index(rng, 7)));
    ++tally[m];
    ++tally["te=" + te];
    recs.push_back(record("P" + std::to_string(i), 0, {{"manufacturer", m}, {"flip_angle", "8"}, {"te", te}}));
  }
  recs[5].iap_values["te"] = "";
  const auto man = value_histogram(recs, "manufacturer", schema);
  ASSERT_EQ(man.bins.size(), 2u);
  EXPECT_EQ(man.bins[0].second, tally["GE"]);
  EXPECT_EQ(man.bins[1].second, tally["Siemens"]);
  const auto te = value_histogram(recs, "te", schema);
  EXPECT_EQ(te.total(), recs.size());
  EXPECT_EQ(te.bins.back().first, kMissingBin);
  EXPECT_EQ(te.bins.back().second, 1u);
  for (std::size_t i = 1; i + 1 < te.bins.size(); ++i) {
    EXPECT_LT(std::stod(te.bins[i - 1].first), std::stod(te.bins[i].first));
  }
}

TEST(Histogram, CountsSumToRecordCount) {
  const auto schema = reduced_schema();
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto recs = random_records(schema, 1 + uniform_index(rng, 80), rng, 5);
    for (auto& r : recs) {
      if (uniform01(rng) < 0.1) r.iap_values["flip_angle"] = "";
    }
    for (const auto& d : schema.descriptors()) EXPECT_EQ(value_histogram(recs, d.name, schema).total(), recs.size());
  }
}

TEST(Overlap, MatchesSetAlgebraOnRandomFixtures) {
  const auto schema = small_schema();
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_records(schema, uniform_index(rng, 25), rng, 3);
    const auto b = random_records(schema, uniform_index(rng, 25), rng, 3);
    for (bool categorical_only : {false, true}) {
      const auto mode = categorical_only ? CombinationMode::kCategoricalOnly : CombinationMode::kAllIaps;
      const auto sa = tuples(a, schema, categorical_only), sb = tuples(b, schema, categorical_only);
      std::size_t both = 0;
      for (const auto& t : sa) both += sb.count(t);
      const auto c = combination_overlap(a, b, schema, mode);
      EXPECT_EQ(c.both, both);
      EXPECT_EQ(c.only_a, sa.size() - both);
      EXPECT_EQ(c.only_b, sb.size() - both);
      const auto swapped = combination_overlap(b, a, schema, mode);
      EXPECT_EQ(swapped.only_a, c.only_b);
      EXPECT_EQ(swapped.only_b, c.only_a);
      EXPECT_EQ(swapped.both, c.both);
    }
  }
}

TEST(Overlap, Examples) {
  const auto schema = small_schema();
  Rng rng(6);
  const auto a = random_records(schema, 30, rng, 2);
  const auto same = combination_overlap(a, a, schema);
  EXPECT_EQ(same.only_a, 0u);
  EXPECT_EQ(same.only_b, 0u);
  EXPECT_EQ(same.both, tuples(a, schema, false).size());

  const std::vector<SliceRecord> x{record("A", 0, {{"manufacturer", "GE"}, {"flip_angle", "8"}, {"te", "2"}})};
  const std::vector<SliceRecord> y{record("B", 0, {{"manufacturer", "GE"}, {"flip_angle", "8"}, {"te", "2.0"}})};
  const auto d = combination_overlap(x, y, schema);
  EXPECT_EQ(d.only_a, 1u);
  EXPECT_EQ(d.only_b, 1u);
  EXPECT_EQ(d.both, 0u);
  EXPECT_EQ(combination_overlap(x, y, schema, CombinationMode::kCategoricalOnly).both, 1u);
}

TEST(Overlap, HandBuiltTwelveTupleFixture) {
  const auto schema = small_schema();
  auto r = [](const char* m, const char* f, const char* te) {
    return record("P", 0, {{"manufacturer", m}, {"flip_angle", f}, {"te", te}});
  };
  // A holds 7 unique tuples (one repeated), B holds 5; 3 are shared.
  const std::vector<SliceRecord> a{r("GE", "8", "1.5"),  r("GE", "10", "1.5"), r("GE", "12", "2"),
                                   r("Siemens", "8", "2"), r("Siemens", "10", "2.5"), r("Siemens", "12", "2.5"),
                                   r("GE", "8", "2.5"),  r("GE", "8", "1.5")};
  const std::vector<SliceRecord> b{r("GE", "8", "1.5"), r("Siemens", "8", "2"), r("GE", "8", "2.5"),
                                   r("Siemens", "8", "1.5"), r("GE", "12", "1.5")};
  const auto c = combination_overlap(a, b, schema, CombinationMode::kAllIaps, "train", "test");
  EXPECT_EQ(c.only_a, 4u);
  EXPECT_EQ(c.only_b, 2u);
  EXPECT_EQ(c.both, 3u);
  const OverlapCounts rows[] = {c};
  const auto table = overlap_table(rows);
  EXPECT_NE(table.find("train"), std::string::npos);
  EXPECT_NE(table.find("Num. in A not B"), std::string::npos);
}

TEST(Overlap, RejectsMissingValuesAndMismatchedSchemas) {
  const auto schema = small_schema();
  const std::vector<SliceRecord> a{record("A", 0, {{"manufacturer", "GE"}, {"flip_angle", "8"}})};
  EXPECT_THROW(combination_overlap(a, a, schema), SchemaError);
  Rng rng(7);
  const auto b = random_records(schema, 5, rng, 2);
  EXPECT_THROW(combination_overlap(b, schema, b, reduced_schema()), SchemaError);
  EXPECT_NO_THROW(combination_overlap(b, schema, b, small_schema()));
}
