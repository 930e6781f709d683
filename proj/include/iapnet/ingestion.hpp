#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iapnet/image.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

struct SliceRecord {
  std::string patient_id;
  int slice_index = 0;
  std::filesystem::path image_path;  // absolute, or relative to the manifest directory
  ValueMap iap_values;                // empty string = missing
  std::optional<int> downstream_label;

  bool operator==(const SliceRecord&) const = default;
};

// Manifest columns: patient_id, slice_index, image_path, <IAP...>, downstream_label.
// Relative image paths are resolved against the manifest's directory and must exist.
std::vector<SliceRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const SliceRecord> records, std::span<const std::string> iap_names,
                    const std::filesystem::path& path);

struct ExclusionResult {
  std::vector<SliceRecord> kept;
  std::vector<std::string> excluded_patients;  // sorted
};

// Drops every slice of any patient with a missing schema IAP on any slice.
ExclusionResult exclude_incomplete(std::span<const SliceRecord> records, const IapSchema& schema);

using SplitFractions = std::array<double, 3>;

struct SplitAssignment {
  std::vector<SliceRecord> train;
  std::vector<SliceRecord> val;
  std::vector<SliceRecord> test;
  std::uint64_t seed = 0;
  SplitFractions fractions{};

  std::span<const SliceRecord> subset(std::size_t i) const;
};

// Patients (sorted by id, then shuffled by `seed`) are assigned in order to
// train, val, test; a subset closes once the cumulative slice count reaches
// the cumulative target fraction. Throws SplitError-style Error on bad input.
SplitAssignment split_by_patient(std::span<const SliceRecord> records, const SplitFractions& fractions,
                                 std::uint64_t seed);

SplitFractions parse_fractions(const std::string& text);

constexpr std::size_t kPaperInputSize = 224;

// Bilinear resize to size x size and per-image min-max rescale to [0,255].
// Constant images map to zeros.
Image preprocess_image(const Image& image, std::size_t size = kPaperInputSize);
Image preprocess_image(const std::filesystem::path& image_ref, std::size_t size = kPaperInputSize);

}  // namespace iapnet
