#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iapnet/error.hpp"
#include "iapnet/random.hpp"
#include "iapnet/schema.hpp"

using namespace iapnet;

namespace {

IapDescriptor categorical(std::string name, std::vector<std::string> cats) {
  IapDescriptor d;
  d.name = std::move(name);
  d.kind = IapKind::kCategorical;
  d.categories = std::move(cats);
  return d;
}

IapDescriptor continuous(std::string name, std::string unit = "ms") {
  IapDescriptor d;
  d.name = std::move(name);
  d.kind = IapKind::kContinuous;
  d.unit = std::move(unit);
  return d;
}

IapSchema manufacturer_only() { return build_schema({categorical("manufacturer", {"GE", "Siemens"})}); }

// Every value map reachable by varying one descriptor at a time from a base.
std::vector<ValueMap> single_axis_maps(const IapSchema& schema) {
  ValueMap base;
  for (const auto& d : schema.descriptors()) base[d.name] = d.is_categorical() ? d.categories[0] : "2.4";
  std::vector<ValueMap> out{base};
  for (const auto& d : schema.descriptors()) {
    if (!d.is_categorical()) continue;
    for (const auto& c : d.categories) {
      ValueMap v = base;
      v[d.name] = c;
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace

TEST(SchemaLayout, Table1WidthIsSumOfCardinalitiesPlusContinuous) {
  const std::vector<std::size_t> cardinalities{2, 8, 9, 5, 2, 6, 10, 21, 4, 27};
  const std::size_t categorical_units = std::accumulate(cardinalities.begin(), cardinalities.end(), std::size_t{0});
  EXPECT_EQ(categorical_units, 94u);
  const auto schema = table1_schema();
  EXPECT_EQ(schema.num_categorical(), 10u);
  EXPECT_EQ(schema.num_continuous(), 2u);
  EXPECT_EQ(schema.output_width(), 96u);
  std::vector<std::size_t> got;
  for (const auto& d : schema.descriptors()) {
    if (d.is_categorical()) got.push_back(d.categories.size());
  }
  EXPECT_EQ(got, cardinalities);
}

TEST(SchemaLayout, SmallSchemas) {
  const auto one = manufacturer_only();
  EXPECT_EQ(one.output_width(), 2u);
  const auto two = build_schema({continuous("tr"), continuous("te")});
  EXPECT_EQ(two.output_width(), 2u);
  EXPECT_EQ(two.num_categorical(), 0u);
  EXPECT_EQ(two.num_continuous(), 2u);
}

TEST(SchemaLayout, OffsetsPartitionTheOutputVector) {
  for (const auto& schema : {table1_schema(), reduced_schema()}) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& h : schema.heads()) {
      const auto& d = schema.descriptor(h);
      EXPECT_EQ(h.width, d.is_categorical() && !d.regressed() ? d.categories.size() : 1u);
      spans.emplace_back(h.offset, h.width);
    }
    std::sort(spans.begin(), spans.end());
    std::size_t cursor = 0;
    for (const auto& [offset, width] : spans) {
      EXPECT_EQ(offset, cursor);
      cursor += width;
    }
    EXPECT_EQ(cursor, schema.output_width());
  }
}

TEST(SchemaLayout, DeclarationOrderDefinesOffsets) {
  const auto schema = build_schema({continuous("te"), categorical("a", {"x", "y", "z"}), continuous("tr")});
  ASSERT_EQ(schema.heads().size(), 3u);
  EXPECT_EQ(schema.heads()[0].offset, 0u);
  EXPECT_EQ(schema.heads()[1].offset, 1u);
  EXPECT_EQ(schema.heads()[2].offset, 4u);
}

TEST(SchemaValidation, RejectsMalformedDescriptors) {
  EXPECT_THROW(build_schema({categorical("a", {"x", "y"}), categorical("a", {"x", "y"})}), SchemaError);
  EXPECT_THROW(build_schema({categorical("a", {"x"})}), SchemaError);
  EXPECT_THROW(build_schema({categorical("a", {"x", "x"})}), SchemaError);
  auto c = continuous("te");
  c.categories = {"1", "2"};
  EXPECT_THROW(build_schema({c}), SchemaError);
  auto r = categorical("manufacturer", {"GE", "Siemens"});
  r.treat_as_continuous = true;
  EXPECT_THROW(build_schema({r}), SchemaError);
}

TEST(Encode, Examples) {
  const auto schema = build_schema({categorical("manufacturer", {"GE", "Siemens"}), continuous("te")});
  const auto y = encode_labels({{"manufacturer", "GE"}, {"te", "2.4"}}, schema);
  EXPECT_EQ(y.categorical_targets, std::vector<std::size_t>{0});
  EXPECT_EQ(y.continuous_targets, std::vector<double>{2.4});
  EXPECT_THROW(encode_labels({{"manufacturer", "Philips"}, {"te", "2.4"}}, schema), EncodeError);
  EXPECT_THROW(encode_labels({{"manufacturer", "GE"}}, schema), EncodeError);
  EXPECT_THROW(encode_labels({{"manufacturer", "GE"}, {"te", ""}}, schema), EncodeError);
  EXPECT_THROW(encode_labels({{"manufacturer", "GE"}, {"te", "nan"}}, schema), EncodeError);
  EXPECT_THROW(encode_labels({{"manufacturer", "GE"}, {"te", "inf"}}, schema), EncodeError);
}

TEST(Decode, ArgmaxAndTies) {
  const auto schema = manufacturer_only();
  EXPECT_EQ(decode_prediction(PredictionVector(schema, {0.1, 2.3}), schema).at("manufacturer").label, "Siemens");
  EXPECT_EQ(decode_prediction(PredictionVector(schema, {1.0, 1.0}), schema).at("manufacturer").label, "GE");
  EXPECT_THROW(PredictionVector(schema, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Decode, RankingOrdersByScoreThenIndex) {
  const std::vector<double> logits{0.5, 2.0, 0.5, -1.0, 2.0};
  EXPECT_EQ(rank_categories(logits), (std::vector<std::size_t>{1, 4, 0, 2, 3}));
}

TEST(Decode, ExhaustiveRoundTripOverEveryCategory) {
  for (const auto& schema : {table1_schema(), reduced_schema()}) {
    std::size_t checked = 0;
    for (const auto& v : single_axis_maps(schema)) {
      const auto y = encode_labels(v, schema);
      const auto decoded = decode_prediction(one_hot(y, schema), schema);
      for (const auto& d : schema.descriptors()) {
        const auto& head = decoded.at(d.name);
        if (d.is_categorical()) {
          EXPECT_EQ(head.label, v.at(d.name));
        } else {
          EXPECT_EQ(head.value, std::stod(v.at(d.name)));
        }
      }
      EXPECT_EQ(encode_labels(decoded.values(), schema), y);
      ++checked;
    }
    std::size_t expected = 1;
    for (const auto& d : schema.descriptors()) expected += d.is_categorical() ? d.categories.size() : 0;
    EXPECT_EQ(checked, expected);
  }
}

TEST(Decode, RandomValueMapsRoundTrip) {
  const auto schema = table1_schema();
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    ValueMap v;
    for (const auto& d : schema.descriptors()) {
      v[d.name] = d.is_categorical() ? d.categories[uniform_index(rng, d.categories.size())]
                                     : format_double(uniform(rng, 1.0, 8.0));
    }
    const auto y = encode_labels(v, schema);
    EXPECT_EQ(encode_labels(decode_prediction(one_hot(y, schema), schema).values(), schema), y);
    EXPECT_EQ(label_values(y, schema).size(), schema.size());
  }
}

TEST(Decode, InvariantToConstantShiftOfOneHead) {
  const auto schema = table1_schema();
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raw(schema.output_width());
    for (auto& x : raw) x = normal(rng);
    const auto before = decode_prediction(PredictionVector(schema, raw), schema);
    const auto& head = schema.heads()[uniform_index(rng, schema.heads().size())];
    if (head.kind != HeadKind::kClassification) continue;
    const double shift = uniform(rng, -50, 50);
    for (std::size_t i = 0; i < head.width; ++i) raw[head.offset + i] += shift;
    const auto after = decode_prediction(PredictionVector(schema, raw), schema);
    EXPECT_EQ(before.values(), after.values());
  }
}

TEST(RegressionVariant, NumericCategoricalBecomesWidthOneHead) {
  const auto base = reduced_schema();
  const std::vector<std::string> names{"flip_angle"};
  const auto variant = apply_regression_variant(base, names);
  EXPECT_EQ(variant.output_width(), base.output_width() - 4 + 1);
  const auto& d = variant.descriptors()[variant.index_of("flip_angle")];
  EXPECT_TRUE(d.regressed());
  const auto y = encode_labels({{"manufacturer", "GE"},
                                {"field_strength", "3"},
                                {"patient_position", "HFP"},
                                {"contrast_agent", "Gadavist"},
                                {"slice_thickness", "2"},
                                {"flip_angle", "12"},
                                {"tr", "4.27"},
                                {"te", "2.4"}},
                               variant);
  EXPECT_EQ(y.continuous_targets.size(), 3u);
  EXPECT_NE(std::find(y.continuous_targets.begin(), y.continuous_targets.end(), 12.0), y.continuous_targets.end());
  EXPECT_EQ(decode_prediction(one_hot(y, variant), variant).at("flip_angle").label, "12");

  const auto reverted = revert_regression_variant(variant);
  EXPECT_EQ(reverted.output_width(), base.output_width());
  EXPECT_EQ(reverted.fingerprint(), base.fingerprint());
}

TEST(RegressionVariant, NonNumericLabelsRejected) {
  const std::vector<std::string> names{"manufacturer"};
  EXPECT_THROW(apply_regression_variant(reduced_schema(), names), SchemaError);
  const std::vector<std::string> unknown{"nope"};
  EXPECT_THROW(apply_regression_variant(reduced_schema(), unknown), SchemaError);
}

TEST(SchemaDocument, RoundTripPreservesLayoutAndFingerprint) {
  for (const auto& schema : {table1_schema(), reduced_schema()}) {
    const auto text = dump_schema(schema);
    EXPECT_EQ(text.rfind("//", 0), 0u);
    EXPECT_NE(text.find("output width " + std::to_string(schema.output_width())), std::string::npos);
    const auto back = parse_schema(text);
    EXPECT_EQ(back.descriptors(), schema.descriptors());
    EXPECT_EQ(back.fingerprint(), schema.fingerprint());
  }
}

TEST(SchemaDocument, FingerprintTracksLayout) {
  const auto a = reduced_schema();
  EXPECT_EQ(a.fingerprint(), reduced_schema().fingerprint());
  EXPECT_EQ(a.fingerprint().size(), 16u);
  EXPECT_NE(a.fingerprint(), table1_schema().fingerprint());
  const std::vector<std::string> names{"slice_thickness"};
  EXPECT_NE(a.fingerprint(), apply_regression_variant(a, names).fingerprint());
}

TEST(SchemaDocument, ShippedAssetsMatchBuiltIns) {
  const std::filesystem::path dir = IAPNET_ASSET_DIR;
  EXPECT_EQ(load_schema(dir / "schema_table1.json").fingerprint(), table1_schema().fingerprint());
  EXPECT_EQ(load_schema(dir / "schema_reduced.json").fingerprint(), reduced_schema().fingerprint());
}

TEST(SchemaDocument, MalformedDocumentsRejected) {
  EXPECT_THROW(parse_schema("not json"), SchemaError);
  EXPECT_THROW(parse_schema(R"({"descriptors": [{"name": "a", "kind": "weird"}]})"), SchemaError);
}
