#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iapnet/image.hpp"
#include "iapnet/ingestion.hpp"
#include "iapnet/random.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

// Appearance channels an IAP can drive. Categorical IAPs use the ladder
// channels, continuous IAPs the two relaxation channels.
enum class Channel {
  kNoiseSigma,
  kBlurSigma,
  kGamma,
  kGridPeriod,
  kBorderWidth,
  kPlateauLevel,
  kVerticalFlip,
  kTextureFrequency,
  kMarkerCount,
  kRingRadius,
  kEchoTime,        // continuous: transverse decay, exp(-TE/T2)
  kRepetitionTime,  // continuous: longitudinal recovery, 1 - exp(-TR/T1)
};

std::string to_string(Channel channel);
Channel parse_channel(const std::string& text);
bool is_continuous_channel(Channel channel);

// Category i of C maps to lo + (hi - lo) * i / (C - 1). Adjacent settings
// must be at least min_spacing apart.
struct ChannelLadder {
  double lo = 0.0;
  double hi = 1.0;
  double min_spacing = 0.0;
};
ChannelLadder ladder_for(Channel channel);

struct PhantomSpec {
  IapSchema schema;
  std::map<std::string, Channel> channels;  // IAP name -> channel
  std::size_t image_size = 128;
  std::uint64_t base_seed = 0;  // mixed into every anatomy seed
  // Declared lower bound on the mean absolute pixel difference (in [0,1]
  // units) between renders that differ in one categorical IAP.
  double identifiability_floor = 1e-3;
  // Categorical IAP whose category flips the planted downstream rule.
  std::string domain_key = "manufacturer";

  void validate() const;
};

// Maps well-known IAP names to their channels and assigns any remaining IAP
// the next free channel of the right kind.
PhantomSpec default_phantom_spec(const IapSchema& schema);

// Effective rendering parameters, one field per channel. Channels not bound
// to any IAP keep their neutral defaults.
struct RenderParams {
  double noise_sigma = 0.02;
  double blur_sigma = 0.5;
  double gamma = 1.0;
  double grid_period = 0.0;  // 0 = no grid artifact
  double border_width = 0.0;
  std::optional<double> plateau_level;
  bool vertical_flip = false;
  double texture_frequency = 6.0;
  int marker_count = 0;
  double ring_radius = 0.0;  // 0 = no ring
  double echo_time = 2.0;
  double repetition_time = 5.0;

  bool operator==(const RenderParams&) const = default;
};

RenderParams channel_parameters(const ValueMap& values, const PhantomSpec& spec);

// Anatomy facts the downstream labeller depends on.
struct AnatomyInfo {
  int lesion_side = 0;  // 0 = left, 1 = right (image columns)
};

struct Phantom {
  Image image;  // values in [0,1]
  AnatomyInfo anatomy;
};

// Deterministic in (values, anatomy_seed, slice_index, spec). Anatomy and
// noise realisation depend only on the seed and slice; appearance depends
// only on the IAP values. Throws EncodeError for invalid values.
Phantom render_phantom(const ValueMap& values, std::uint64_t anatomy_seed, int slice_index, const PhantomSpec& spec);

// Planted downstream rule: positive when the lesion sits on the side selected
// by the parity of the domain-key category (even -> left, odd -> right).
int downstream_label(const AnatomyInfo& anatomy, std::size_t domain_category);

using IapSampler = std::function<ValueMap(Rng&)>;

// Uniform over categories; continuous values uniform over the descriptor's
// range, rounded to 3 decimals.
IapSampler uniform_sampler(const IapSchema& schema);

struct CohortOptions {
  std::size_t n_patients = 20;
  std::size_t slices_per_patient = 10;
  double missing_fraction = 0.0;  // floor(fraction * n_patients) patients get one blanked IAP
  bool downstream_labels = true;
  int bit_depth = 16;
};

struct CohortSummary {
  std::filesystem::path manifest;
  std::size_t rows = 0;
  std::size_t patients = 0;
  std::vector<std::string> blanked_patients;
  std::vector<SliceRecord> records;
};

// Writes images/<patient>_sNNN.png, manifest.csv, schema.json and
// provenance.json under out_dir. Patients render in parallel with per-patient
// seeds derived from `seed`.
CohortSummary generate_cohort(const CohortOptions& options, const IapSampler& sampler, const PhantomSpec& spec,
                              std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace iapnet
