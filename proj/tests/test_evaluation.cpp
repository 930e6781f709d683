#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "iapnet/error.hpp"
#include "iapnet/evaluation.hpp"
#include "iapnet/random.hpp"
#include "json.hpp"

using namespace iapnet;

namespace {

std::vector<std::size_t> random_ranking(std::size_t c, Rng& rng) {
  std::vector<std::size_t> r(c);
  for (std::size_t i = 0; i < c; ++i) r[i] = i;
  shuffle(r.begin(), r.end(), rng);
  return r;
}

std::size_t brute_topk_hits(const std::vector<std::vector<std::size_t>>& rankings,
                            const std::vector<std::size_t>& truth, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < k; ++j) found = found || rankings[i][j] == truth[i];
    hits += found;
  }
  return hits;
}

// Two passes: differences first, then their squares summed in long double.
double brute_mse(const std::vector<double>& p, const std::vector<double>& t) {
  std::vector<long double> d(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) d[i] = static_cast<long double>(p[i]) - t[i];
  long double s = 0;
  for (auto x : d) s += x * x;
  return static_cast<double>(s / p.size());
}

struct Fixture {
  std::vector<PredictionVector> preds;
  std::vector<LabelVector> labels;
};

Fixture random_fixture(const IapSchema& schema, std::size_t n, Rng& rng) {
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> raw(schema.output_width());
    for (auto& v : raw) v = normal(rng);
    LabelVector y;
    for (const auto& h : schema.heads()) {
      if (h.kind == HeadKind::kClassification) {
        y.categorical_targets.push_back(uniform_index(rng, h.width));
      } else {
        const double t = uniform(rng, 1.0, 8.0);
        y.continuous_targets.push_back(t);
        raw[h.offset] = t * (1.0 + 0.03 * normal(rng));
      }
    }
    f.preds.emplace_back(schema, std::move(raw));
    f.labels.push_back(std::move(y));
  }
  return f;
}

}  // namespace

TEST(TopK, MatchesBruteForceOnRandomCases) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + uniform_index(rng, 9), n = 1 + uniform_index(rng, 30);
    std::vector<std::vector<std::size_t>> rankings;
    std::vector<std::size_t> truth;
    for (std::size_t i = 0; i < n; ++i) {
      rankings.push_back(random_ranking(c, rng));
      truth.push_back(uniform_index(rng, c));
    }
    double previous = 0.0;
    for (std::size_t k = 1; k <= c; ++k) {
      const double acc = topk_accuracy(rankings, truth, k);
      EXPECT_EQ(acc, static_cast<double>(brute_topk_hits(rankings, truth, k)) / static_cast<double>(n));
      EXPECT_GE(acc, previous);
      previous = acc;
    }
    EXPECT_EQ(previous, 1.0);
  }
}

TEST(TopK, Examples) {
  const std::vector<std::vector<std::size_t>> r{{0, 1, 2}, {2, 0, 1}};
  const std::vector<std::size_t> first{0, 2}, second{1, 0};
  EXPECT_EQ(topk_accuracy(r, first, 1), 1.0);
  EXPECT_EQ(topk_accuracy(r, first, 3), 1.0);
  EXPECT_EQ(topk_accuracy(r, second, 1), 0.0);
  EXPECT_EQ(topk_accuracy(r, second, 2), 1.0);
  EXPECT_THROW(topk_accuracy(r, first, 0), MetricError);
  EXPECT_THROW(topk_accuracy(r, first, 4), MetricError);
  const std::vector<std::size_t> short_truth{0};
  EXPECT_THROW(topk_accuracy(r, short_truth, 1), MetricError);
}

TEST(TopK, RandomPredictionsOverEightClassesNearChance) {
  Rng rng(8);
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> truth;
  for (int i = 0; i < 200; ++i) {
    rankings.push_back(random_ranking(8, rng));
    truth.push_back(uniform_index(rng, 8));
  }
  const double acc = topk_accuracy(rankings, truth, 1);
  EXPECT_EQ(acc, static_cast<double>(brute_topk_hits(rankings, truth, 1)) / 200.0);
  EXPECT_NEAR(acc, 1.0 / 8, 0.07);
}

TEST(Mse, MatchesTwoPassOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 40);
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = uniform(rng, 1.0, 8.0);
      p[i] = t[i] + normal(rng);
    }
    EXPECT_NEAR(head_mse(p, t), brute_mse(p, t), 1e-12);
    EXPECT_GE(head_mse(p, t), 0.0);
  }
}

TEST(Mse, Examples) {
  const std::vector<double> t{1.25, 2.0, 2.76};
  EXPECT_EQ(head_mse(t, t), 0.0);
  const std::vector<double> p{1.35, 2.1, 2.86};
  EXPECT_NEAR(head_mse(p, t), 0.01, 1e-12);
  EXPECT_THROW(head_mse(std::vector<double>{}, std::vector<double>{}), MetricError);
  EXPECT_THROW(head_mse(p, std::vector<double>{1.0}), MetricError);
  EXPECT_THROW(head_mse(std::vector<double>{NAN}, std::vector<double>{1.0}), MetricError);
}

TEST(RelativeError, StrictBoundary) {
  EXPECT_TRUE(relative_error_correct(4.27, 4.27));
  EXPECT_FALSE(relative_error_correct(1.02 * 2.0, 2.0));
  EXPECT_FALSE(relative_error_correct(1.5, 1.0, 0.5));
  EXPECT_TRUE(relative_error_correct(1.0195, 1.0));
  EXPECT_FALSE(relative_error_correct(0.97, 1.0));
  EXPECT_THROW(relative_error_correct(1.0, 0.0), MetricError);
}

TEST(Report, PerfectPredictorScoresFullMarks) {
  const auto schema = table1_schema();
  Rng rng(3);
  const auto f = random_fixture(schema, 20, rng);
  std::vector<PredictionVector> perfect;
  for (const auto& y : f.labels) perfect.push_back(one_hot(y, schema));
  const auto report = build_report(perfect, f.labels, schema);
  ASSERT_EQ(report.heads.size(), schema.num_categorical() + schema.num_continuous());
  EXPECT_EQ(report.samples, 20u);
  EXPECT_EQ(report.schema_fingerprint, schema.fingerprint());
  for (const auto& h : report.heads) {
    if (h.kind == HeadKind::kClassification) {
      EXPECT_EQ(*h.top1, 1.0);
      EXPECT_EQ(h.top2.has_value(), h.categories > 2) << h.name;
    } else {
      EXPECT_EQ(*h.mse, 0.0);
      EXPECT_EQ(*h.within_tolerance, 1.0);
    }
  }
}

TEST(Report, TwoCategoryHeadsShowNotApplicable) {
  const auto schema = reduced_schema();
  Rng rng(4);
  const auto f = random_fixture(schema, 10, rng);
  const auto report = build_report(f.preds, f.labels, schema);
  EXPECT_FALSE(report.at("manufacturer").top2.has_value());
  EXPECT_FALSE(report.at("patient_position").top2.has_value());
  EXPECT_TRUE(report.at("flip_angle").top2.has_value());
  const auto text = report.to_text();
  std::size_t na = 0;
  for (auto pos = text.find("N/A"); pos != std::string::npos; pos = text.find("N/A", pos + 1)) ++na;
  EXPECT_EQ(na, 2u);
  EXPECT_NE(text.find(schema.fingerprint()), std::string::npos);
  const auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j["samples"], 10);
  EXPECT_EQ(j["heads"].size(), schema.size());
  EXPECT_TRUE(j["heads"][0]["top2"].is_null());
}

TEST(Report, EqualsDirectMetricCalls) {
  const auto schema = table1_schema();
  Rng rng(5);
  const auto f = random_fixture(schema, 60, rng);
  const auto report = build_report(f.preds, f.labels, schema);
  for (const auto& h : schema.heads()) {
    const auto& row = report.at(schema.descriptor(h).name);
    if (h.kind == HeadKind::kClassification) {
      std::vector<std::vector<std::size_t>> rankings;
      std::vector<std::size_t> truth;
      for (std::size_t i = 0; i < f.preds.size(); ++i) {
        rankings.push_back(rank_categories(f.preds[i].logits(h)));
        truth.push_back(f.labels[i].categorical_targets[h.slot]);
      }
      EXPECT_EQ(*row.top1, topk_accuracy(rankings, truth, 1));
      if (h.width > 2) EXPECT_EQ(*row.top2, topk_accuracy(rankings, truth, 2));
    } else {
      std::vector<double> p, t;
      std::size_t ok = 0;
      for (std::size_t i = 0; i < f.preds.size(); ++i) {
        p.push_back(f.preds[i].value(h));
        t.push_back(f.labels[i].continuous_targets[h.slot]);
        ok += relative_error_correct(p.back(), t.back());
      }
      EXPECT_EQ(*row.mse, head_mse(p, t));
      EXPECT_EQ(*row.within_tolerance, static_cast<double>(ok) / static_cast<double>(p.size()));
    }
  }
}

TEST(Report, InvariantUnderPermutation) {
  const auto schema = reduced_schema();
  Rng rng(6);
  auto f = random_fixture(schema, 50, rng);
  const auto before = build_report(f.preds, f.labels, schema);
  std::vector<std::size_t> order(f.preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  Fixture g;
  for (auto i : order) {
    g.preds.push_back(f.preds[i]);
    g.labels.push_back(f.labels[i]);
  }
  const auto after = build_report(g.preds, g.labels, schema);
  for (std::size_t i = 0; i < before.heads.size(); ++i) {
    EXPECT_EQ(before.heads[i].top1, after.heads[i].top1);
    EXPECT_EQ(before.heads[i].top2, after.heads[i].top2);
    if (before.heads[i].mse) EXPECT_NEAR(*before.heads[i].mse, *after.heads[i].mse, 1e-12);
  }
}

TEST(Report, RegressedHeadReportsMse) {
  const std::vector<std::string> names{"flip_angle"};
  const auto schema = apply_regression_variant(reduced_schema(), names);
  Rng rng(7);
  const auto f = random_fixture(schema, 10, rng);
  const auto report = build_report(f.preds, f.labels, schema);
  const auto& row = report.at("flip_angle");
  EXPECT_TRUE(row.regressed);
  EXPECT_TRUE(row.mse.has_value());
  EXPECT_FALSE(row.top1.has_value());
  EXPECT_NE(report.to_text().find('*'), std::string::npos);
}

TEST(Report, RejectsEmptyOrMismatchedInput) {
  const auto schema = reduced_schema();
  EXPECT_THROW(build_report(std::vector<PredictionVector>{}, std::vector<LabelVector>{}, schema), MetricError);
  Rng rng(9);
  const auto f = random_fixture(schema, 3, rng);
  const std::vector<LabelVector> fewer(f.labels.begin(), f.labels.begin() + 2);
  EXPECT_THROW(build_report(f.preds, fewer, schema), MetricError);
}
