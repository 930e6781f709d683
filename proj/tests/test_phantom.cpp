#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>

#include "iapnet/error.hpp"
#include "iapnet/ingestion.hpp"
#include "iapnet/phantom.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace iapnet;
using iapnet::testing::TempDir;

namespace {

ValueMap base_values(const IapSchema& schema) {
  ValueMap v;
  for (const auto& d : schema.descriptors()) {
    v[d.name] = d.is_categorical() ? d.categories[0] : format_double(0.5 * (d.range->first + d.range->second));
  }
  return v;
}

double channel_value(const RenderParams& p, Channel c) {
  switch (c) {
    case Channel::kNoiseSigma: return p.noise_sigma;
    case Channel::kBlurSigma: return p.blur_sigma;
    case Channel::kGamma: return p.gamma;
    case Channel::kGridPeriod: return p.grid_period;
    case Channel::kBorderWidth: return p.border_width;
    case Channel::kPlateauLevel: return p.plateau_level.value_or(-1.0);
    case Channel::kVerticalFlip: return p.vertical_flip ? 1.0 : 0.0;
    case Channel::kTextureFrequency: return p.texture_frequency;
    case Channel::kMarkerCount: return p.marker_count;
    case Channel::kRingRadius: return p.ring_radius;
    case Channel::kEchoTime: return p.echo_time;
    case Channel::kRepetitionTime: return p.repetition_time;
  }
  return 0.0;
}

const Channel kAllChannels[] = {Channel::kNoiseSigma,   Channel::kBlurSigma,        Channel::kGamma,
                                Channel::kGridPeriod,   Channel::kBorderWidth,      Channel::kPlateauLevel,
                                Channel::kVerticalFlip, Channel::kTextureFrequency, Channel::kMarkerCount,
                                Channel::kRingRadius,   Channel::kEchoTime,         Channel::kRepetitionTime};

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

double mean(const Image& a) {
  double s = 0;
  for (float v : a.pixels) s += v;
  return s / static_cast<double>(a.pixels.size());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Channels, NamesRoundTrip) {
  for (auto c : kAllChannels) EXPECT_EQ(parse_channel(to_string(c)), c);
  EXPECT_THROW(parse_channel("sparkle"), Error);
  EXPECT_TRUE(is_continuous_channel(Channel::kEchoTime));
  EXPECT_FALSE(is_continuous_channel(Channel::kGamma));
}

TEST(Spec, DefaultMapsEveryIapToItsOwnChannel) {
  for (const auto& schema : {reduced_schema(), table1_schema()}) {
    const auto spec = default_phantom_spec(schema);
    EXPECT_NO_THROW(spec.validate());
    std::set<Channel> used;
    for (const auto& d : schema.descriptors()) {
      ASSERT_TRUE(spec.channels.count(d.name)) << d.name;
      EXPECT_TRUE(used.insert(spec.channels.at(d.name)).second);
    }
    EXPECT_EQ(spec.channels.at("patient_position"), Channel::kVerticalFlip);
    EXPECT_EQ(spec.channels.at("field_strength"), Channel::kNoiseSigma);
    EXPECT_EQ(spec.channels.at("te"), Channel::kEchoTime);
    EXPECT_EQ(spec.channels.at("tr"), Channel::kRepetitionTime);
  }
}

TEST(Spec, ValidationRejectsBadMaps) {
  auto spec = default_phantom_spec(reduced_schema());
  auto missing = spec;
  missing.channels.erase("te");
  EXPECT_THROW(missing.validate(), SchemaError);
  auto doubled = spec;
  doubled.channels["flip_angle"] = doubled.channels["slice_thickness"];
  EXPECT_THROW(doubled.validate(), SchemaError);
  auto wrong_kind = spec;
  std::swap(wrong_kind.channels["te"], wrong_kind.channels["flip_angle"]);
  EXPECT_THROW(wrong_kind.validate(), SchemaError);
  auto flip3 = spec;
  std::swap(flip3.channels["patient_position"], flip3.channels["field_strength"]);
  EXPECT_THROW(flip3.validate(), SchemaError);
  auto tiny = spec;
  tiny.image_size = 8;
  EXPECT_THROW(tiny.validate(), SchemaError);
}

TEST(Spec, LadderSettingsRespectMinimumSpacing) {
  for (const auto& schema : {reduced_schema(), table1_schema()}) {
    const auto spec = default_phantom_spec(schema);
    for (const auto& d : schema.descriptors()) {
      if (!d.is_categorical()) continue;
      const Channel c = spec.channels.at(d.name);
      const auto ladder = ladder_for(c);
      auto v = base_values(schema);
      std::vector<double> settings;
      for (const auto& cat : d.categories) {
        v[d.name] = cat;
        settings.push_back(channel_value(channel_parameters(v, spec), c));
      }
      for (std::size_t i = 1; i < settings.size(); ++i) {
        EXPECT_GE(std::abs(settings[i] - settings[i - 1]) + 1e-12, ladder.min_spacing) << d.name << " step " << i;
      }
    }
  }
}

TEST(Spec, ChangingOneIapLeavesOtherChannelsUntouched) {
  for (const auto& schema : {reduced_schema(), table1_schema()}) {
    const auto spec = default_phantom_spec(schema);
    const auto base = base_values(schema);
    const auto p0 = channel_parameters(base, spec);
    for (const auto& d : schema.descriptors()) {
      const Channel own = spec.channels.at(d.name);
      std::vector<std::string> alternatives;
      if (d.is_categorical()) {
        alternatives.assign(d.categories.begin() + 1, d.categories.end());
      } else {
        alternatives = {format_double(d.range->first), format_double(d.range->second)};
      }
      for (const auto& alt : alternatives) {
        auto v = base;
        v[d.name] = alt;
        const auto p = channel_parameters(v, spec);
        for (auto c : kAllChannels) {
          if (c == own) {
            EXPECT_NE(channel_value(p, c), channel_value(p0, c)) << d.name << "=" << alt;
          } else {
            EXPECT_EQ(channel_value(p, c), channel_value(p0, c)) << d.name << "=" << alt << " moved " << to_string(c);
          }
        }
      }
    }
  }
}

TEST(Render, DeterministicAndSeedDependent) {
  const auto schema = reduced_schema();
  const auto spec = default_phantom_spec(schema);
  const auto v = base_values(schema);
  const auto a = render_phantom(v, 42, 3, spec);
  EXPECT_EQ(a.image, render_phantom(v, 42, 3, spec).image);
  EXPECT_NE(a.image, render_phantom(v, 43, 3, spec).image);
  EXPECT_NE(a.image, render_phantom(v, 42, 4, spec).image);
  EXPECT_EQ(a.image.width, spec.image_size);
  for (float p : a.image.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
}

TEST(Render, PatientPositionIsAVerticalFlip) {
  const auto schema = reduced_schema();
  const auto spec = default_phantom_spec(schema);
  auto v = base_values(schema);
  v["patient_position"] = "FFP";
  const auto a = render_phantom(v, 7, 1, spec).image;
  v["patient_position"] = "HFP";
  const auto b = render_phantom(v, 7, 1, spec).image;
  const std::size_t n = a.height;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < a.width; ++x) ASSERT_EQ(a.at(y, x), b.at(n - 1 - y, x));
  }
  EXPECT_NE(a, b);
}

TEST(Render, MeanIntensityStrictlyMonotoneInEchoTime) {
  const auto schema = reduced_schema();
  const auto spec = default_phantom_spec(schema);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto v = base_values(schema);
    double previous = INFINITY;
    for (int i = 0; i <= 30; ++i) {
      v["te"] = format_double(1.25 + (2.76 - 1.25) * i / 30.0);
      const double m = mean(render_phantom(v, seed, 0, spec).image);
      EXPECT_LT(m, previous) << "te " << v["te"];
      previous = m;
    }
  }
}

TEST(Render, RejectsInvalidValues) {
  const auto schema = reduced_schema();
  const auto spec = default_phantom_spec(schema);
  auto v = base_values(schema);
  v["manufacturer"] = "Philips";
  EXPECT_THROW(render_phantom(v, 1, 0, spec), EncodeError);
  v = base_values(schema);
  v.erase("te");
  EXPECT_THROW(render_phantom(v, 1, 0, spec), EncodeError);
}

// Every pair of categories of every categorical IAP, over several anatomies
// and base tuples, on both schemas.
TEST(Render, IdentifiabilityFloorHolds) {
  for (const auto& schema : {reduced_schema(), table1_schema()}) {
    const auto spec = default_phantom_spec(schema);
    const auto sampler = uniform_sampler(schema);
    double worst = INFINITY;
    std::string worst_case;
    for (std::uint64_t base = 0; base < 3; ++base) {
      Rng rng(derive_seed(99, {base}));
      const auto v0 = sampler(rng);
      const std::uint64_t anatomy = derive_seed(5, {base});
      for (const auto& d : schema.descriptors()) {
        if (!d.is_categorical()) continue;
        std::vector<Image> renders;
        for (const auto& cat : d.categories) {
          auto v = v0;
          v[d.name] = cat;
          renders.push_back(render_phantom(v, anatomy, static_cast<int>(base), spec).image);
        }
        for (std::size_t i = 0; i < renders.size(); ++i) {
          for (std::size_t j = i + 1; j < renders.size(); ++j) {
            const double diff = mean_abs_diff(renders[i], renders[j]);
            if (diff < worst) {
              worst = diff;
              worst_case = d.name + " " + d.categories[i] + " vs " + d.categories[j];
            }
          }
        }
      }
    }
    std::cout << "smallest single-IAP difference (" << schema.size() << " IAPs): " << worst << " at " << worst_case
              << "\n";
    EXPECT_GT(worst, spec.identifiability_floor) << worst_case;
  }
}

TEST(Labels, PlantedRuleFlipsWithDomainParity) {
  EXPECT_EQ(downstream_label({0}, 0), 1);
  EXPECT_EQ(downstream_label({1}, 0), 0);
  EXPECT_EQ(downstream_label({0}, 1), 0);
  EXPECT_EQ(downstream_label({1}, 1), 1);
}

TEST(Sampler, DrawsValidRoundedValues) {
  const auto schema = table1_schema();
  const auto sampler = uniform_sampler(schema);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto v = sampler(rng);
    EXPECT_NO_THROW(encode_labels(v, schema));
    for (const auto& d : schema.descriptors()) {
      if (d.is_categorical()) continue;
      const double x = std::stod(v.at(d.name));
      EXPECT_GE(x, d.range->first);
      EXPECT_LE(x, d.range->second);
      EXPECT_NEAR(x * 1000, std::round(x * 1000), 1e-6);
    }
  }
}

TEST(Cohort, CountsBlankingAndDeterminism) {
  const auto schema = reduced_schema();
  auto spec = default_phantom_spec(schema);
  spec.image_size = 64;
  CohortOptions opt;
  opt.n_patients = 20;
  opt.slices_per_patient = 10;
  opt.missing_fraction = 0.15;
  TempDir a("cohort_a"), b("cohort_b");
  const auto sa = generate_cohort(opt, uniform_sampler(schema), spec, 17, a.path());
  const auto sb = generate_cohort(opt, uniform_sampler(schema), spec, 17, b.path());

  EXPECT_EQ(sa.rows, 200u);
  EXPECT_EQ(sa.patients, 20u);
  EXPECT_EQ(sa.blanked_patients.size(), 3u);
  const auto recs = load_manifest(sa.manifest);
  ASSERT_EQ(recs.size(), 200u);
  std::set<std::string> ids;
  for (const auto& r : recs) {
    ids.insert(r.patient_id);
    EXPECT_TRUE(r.downstream_label.has_value());
  }
  EXPECT_EQ(ids.size(), 20u);
  const auto ex = exclude_incomplete(recs, schema);
  EXPECT_EQ(ex.excluded_patients, sa.blanked_patients);

  EXPECT_EQ(slurp(sa.manifest), slurp(sb.manifest));
  for (std::size_t i = 0; i < recs.size(); i += 37) {
    EXPECT_EQ(slurp(a.path() / sa.records[i].image_path), slurp(b.path() / sb.records[i].image_path));
  }
  EXPECT_EQ(load_schema(a / "schema.json").fingerprint(), schema.fingerprint());
  const auto prov = nlohmann::json::parse(slurp(a / "provenance.json"));
  EXPECT_EQ(prov["seed"], 17);

  // Every patient's slices share one tuple; labels follow the planted rule.
  std::map<std::string, ValueMap> per_patient;
  for (const auto& r : recs) {
    if (std::count(sa.blanked_patients.begin(), sa.blanked_patients.end(), r.patient_id)) continue;
    auto [it, fresh] = per_patient.emplace(r.patient_id, r.iap_values);
    if (!fresh) EXPECT_EQ(it->second, r.iap_values);
  }
}

TEST(Cohort, OptionsAndErrors) {
  const auto schema = reduced_schema();
  auto spec = default_phantom_spec(schema);
  spec.image_size = 32;
  CohortOptions opt;
  opt.n_patients = 4;
  opt.slices_per_patient = 2;
  opt.downstream_labels = false;
  TempDir dir("cohort_opts");
  const auto s = generate_cohort(opt, uniform_sampler(schema), spec, 1, dir.path());
  for (const auto& r : load_manifest(s.manifest)) EXPECT_FALSE(r.downstream_label.has_value());

  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(generate_cohort(opt, uniform_sampler(schema), spec, 1, dir / "file" / "sub"), IoError);
  opt.n_patients = 0;
  EXPECT_THROW(generate_cohort(opt, uniform_sampler(schema), spec, 1, dir / "zero"), Error);
}
