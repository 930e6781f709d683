#include "iapnet/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "iapnet/error.hpp"
#include "iapnet/random.hpp"

namespace iapnet {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool is_missing(const ValueMap& values, const std::string& name) {
  auto it = values.find(name);
  return it == values.end() || it->second.empty() || it->second == "NA";
}

}  // namespace

std::vector<SliceRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw ManifestError("manifest " + path.string() + " has no header row");
  const auto header = split_row(line);
  if (header.size() < 4 || header[0] != "patient_id" || header[1] != "slice_index" ||
      header[2] != "image_path" || header.back() != "downstream_label") {
    throw ManifestError("manifest header must be 'patient_id,slice_index,image_path,<IAPs...>,downstream_label'");
  }
  const std::vector<std::string> iap_names(header.begin() + 3, header.end() - 1);

  std::vector<SliceRecord> records;
  std::set<std::pair<std::string, int>> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_row(line);
    auto malformed = [&](const std::string& why) {
      return ManifestError("manifest " + path.string() + " row " + std::to_string(row) + ": " + why);
    };
    if (fields.size() != header.size()) {
      throw malformed("expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    SliceRecord r;
    r.patient_id = fields[0];
    if (r.patient_id.empty()) throw malformed("empty patient_id");
    try {
      std::size_t used = 0;
      r.slice_index = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw malformed("invalid slice_index '" + fields[1] + "'");
    }
    if (fields[2].empty()) throw malformed("missing image path");
    std::filesystem::path image(fields[2]);
    r.image_path = image.is_absolute() ? image : base / image;
    if (!std::filesystem::exists(r.image_path)) {
      throw malformed("image not found: " + r.image_path.string());
    }
    for (std::size_t i = 0; i < iap_names.size(); ++i) r.iap_values[iap_names[i]] = fields[3 + i];
    const auto& label = fields.back();
    if (!label.empty()) {
      if (label != "0" && label != "1") throw malformed("downstream_label must be 0, 1 or empty");
      r.downstream_label = label == "1" ? 1 : 0;
    }
    if (!seen.emplace(r.patient_id, r.slice_index).second) {
      throw malformed("duplicate (patient_id, slice_index) = (" + r.patient_id + ", " + fields[1] + ")");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(std::span<const SliceRecord> records, std::span<const std::string> iap_names,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "patient_id,slice_index,image_path";
  for (const auto& n : iap_names) out << ',' << n;
  out << ",downstream_label\n";
  for (const auto& r : records) {
    out << r.patient_id << ',' << r.slice_index << ',' << r.image_path.generic_string();
    for (const auto& n : iap_names) {
      auto it = r.iap_values.find(n);
      out << ',' << (it == r.iap_values.end() ? std::string() : it->second);
    }
    out << ',';
    if (r.downstream_label) out << *r.downstream_label;
    out << '\n';
  }
  if (!out) throw IoError("write failed for manifest " + path.string());
}

ExclusionResult exclude_incomplete(std::span<const SliceRecord> records, const IapSchema& schema) {
  std::set<std::string> incomplete;
  for (const auto& r : records) {
    for (const auto& d : schema.descriptors()) {
      if (is_missing(r.iap_values, d.name)) {
        incomplete.insert(r.patient_id);
        break;
      }
    }
  }
  ExclusionResult result;
  for (const auto& r : records) {
    if (!incomplete.contains(r.patient_id)) result.kept.push_back(r);
  }
  result.excluded_patients.assign(incomplete.begin(), incomplete.end());
  return result;
}

std::span<const SliceRecord> SplitAssignment::subset(std::size_t i) const {
  switch (i) {
    case 0: return train;
    case 1: return val;
    case 2: return test;
  }
  throw Error("subset index out of range");
}

SplitAssignment split_by_patient(std::span<const SliceRecord> records, const SplitFractions& fractions,
                                 std::uint64_t seed) {
  double sum = 0.0;
  std::size_t active = 0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw Error("split fractions must be finite and non-negative");
    sum += f;
    if (f > 0.0) ++active;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("split fractions must sum to 1");

  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.patient_id];
  std::vector<std::string> patients;
  for (const auto& [id, n] : counts) patients.push_back(id);
  if (patients.size() < active) {
    throw Error("cannot split " + std::to_string(patients.size()) + " patients into " +
                std::to_string(active) + " non-empty subsets");
  }
  Rng rng(seed);
  shuffle(patients.begin(), patients.end(), rng);

  const double total = static_cast<double>(records.size());
  std::map<std::string, std::size_t> subset_of;
  std::size_t s = 0;
  double cumulative_target = fractions[0] * total;
  std::size_t cumulative = 0;
  std::size_t in_subset = 0;
  auto remaining_active_after = [&](std::size_t i) {
    std::size_t n = 0;
    for (std::size_t j = i + 1; j < 3; ++j) n += fractions[j] > 0.0 ? 1 : 0;
    return n;
  };
  auto advance = [&]() {
    do {
      ++s;
      cumulative_target += fractions[s] * total;
    } while (s < 2 && fractions[s] == 0.0);
    in_subset = 0;
  };
  if (fractions[0] == 0.0) advance();
  for (std::size_t p = 0; p < patients.size(); ++p) {
    // The last non-empty subset takes whatever remains.
    const std::size_t left = patients.size() - p;
    const std::size_t later = remaining_active_after(s);
    if (later > 0 && in_subset > 0 &&
        (static_cast<double>(cumulative) >= cumulative_target - 1e-9 || left <= later)) {
      advance();
    }
    subset_of[patients[p]] = s;
    cumulative += counts[patients[p]];
    ++in_subset;
  }

  SplitAssignment out;
  out.seed = seed;
  out.fractions = fractions;
  for (const auto& r : records) {
    switch (subset_of.at(r.patient_id)) {
      case 0: out.train.push_back(r); break;
      case 1: out.val.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

SplitFractions parse_fractions(const std::string& text) {
  SplitFractions f{};
  std::istringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw Error("expected three comma-separated fractions, got '" + text + "'");
    try {
      f[i++] = std::stod(part);
    } catch (const std::exception&) {
      throw Error("invalid fraction '" + part + "'");
    }
  }
  if (i != 3) throw Error("expected three comma-separated fractions, got '" + text + "'");
  return f;
}

Image preprocess_image(const Image& image, std::size_t size) {
  if (image.empty()) throw ShapeError("cannot preprocess a zero-sized image");
  Image out = (image.width == size && image.height == size) ? image : resize_bilinear(image, size, size);
  auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
  const float mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0f);
    return out;
  }
  const double scale = 255.0 / (static_cast<double>(mx) - mn);
  for (auto& p : out.pixels) p = static_cast<float>((static_cast<double>(p) - mn) * scale);
  return out;
}

Image preprocess_image(const std::filesystem::path& image_ref, std::size_t size) {
  return preprocess_image(read_image(image_ref), size);
}

}  // namespace iapnet
