#include "iapnet/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "iapnet/error.hpp"
#include "json.hpp"

namespace iapnet {

namespace {

std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

void validate(const IapDescriptor& d) {
  if (d.name.empty()) throw SchemaError("descriptor with empty name");
  if (d.is_categorical()) {
    if (d.categories.size() < 2) {
      throw SchemaError("categorical IAP '" + d.name + "' needs at least 2 categories");
    }
    std::set<std::string> seen;
    for (const auto& c : d.categories) {
      if (!seen.insert(c).second) {
        throw SchemaError("categorical IAP '" + d.name + "' repeats label '" + c + "'");
      }
    }
    if (d.treat_as_continuous && !d.has_numeric_labels()) {
      throw SchemaError("IAP '" + d.name + "' cannot be regressed: non-numeric category label");
    }
  } else {
    if (!d.categories.empty()) {
      throw SchemaError("continuous IAP '" + d.name + "' must not list categories");
    }
    if (d.treat_as_continuous) {
      throw SchemaError("treat_as_continuous set on continuous IAP '" + d.name + "'");
    }
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

bool IapDescriptor::has_numeric_labels() const {
  return is_categorical() &&
         std::all_of(categories.begin(), categories.end(),
                     [](const std::string& c) { return parse_number(c).has_value(); });
}

double IapDescriptor::numeric_label(std::size_t category) const {
  auto v = parse_number(categories.at(category));
  if (!v) throw SchemaError("label '" + categories[category] + "' of '" + name + "' is not numeric");
  return *v;
}

IapSchema IapSchema::build(std::vector<IapDescriptor> descriptors) {
  IapSchema schema;
  std::set<std::string> names;
  std::ostringstream canon;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const auto& d = descriptors[i];
    validate(d);
    if (!names.insert(d.name).second) throw SchemaError("duplicate IAP name '" + d.name + "'");

    Head head;
    head.descriptor = i;
    head.offset = schema.width_;
    if (d.is_categorical() && !d.treat_as_continuous) {
      head.kind = HeadKind::kClassification;
      head.width = d.categories.size();
      head.slot = schema.num_categorical_++;
    } else {
      head.kind = HeadKind::kRegression;
      head.width = 1;
      head.slot = schema.num_continuous_++;
    }
    schema.width_ += head.width;
    schema.heads_.push_back(head);

    canon << d.name << '|' << (d.is_categorical() ? 'c' : 'r') << '|' << head.width << '|'
          << (d.treat_as_continuous ? 1 : 0) << '|';
    for (const auto& c : d.categories) canon << c << '\x1f';
    canon << '\x1e';
  }
  schema.descriptors_ = std::move(descriptors);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon.str())));
  schema.fingerprint_ = buf;
  return schema;
}

IapSchema build_schema(std::vector<IapDescriptor> descriptors) {
  return IapSchema::build(std::move(descriptors));
}

std::optional<std::size_t> IapSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    if (descriptors_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t IapSchema::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw SchemaError("unknown IAP '" + std::string(name) + "'");
  return *i;
}

PredictionVector::PredictionVector(const IapSchema& schema, std::vector<double> raw)
    : raw_(std::move(raw)) {
  if (raw_.size() != schema.output_width()) {
    throw ShapeError("prediction has " + std::to_string(raw_.size()) +
                     " units, schema expects " + std::to_string(schema.output_width()));
  }
}

LabelVector encode_labels(const ValueMap& raw_values, const IapSchema& schema) {
  LabelVector labels;
  labels.categorical_targets.resize(schema.num_categorical());
  labels.continuous_targets.resize(schema.num_continuous());
  for (const auto& head : schema.heads()) {
    const auto& d = schema.descriptor(head);
    auto it = raw_values.find(d.name);
    if (it == raw_values.end() || it->second.empty()) {
      throw EncodeError("missing value for IAP '" + d.name + "'");
    }
    const std::string& raw = it->second;
    if (d.is_categorical()) {
      auto pos = std::find(d.categories.begin(), d.categories.end(), raw);
      if (pos == d.categories.end()) {
        throw EncodeError("unknown category '" + raw + "' for IAP '" + d.name + "'");
      }
      auto index = static_cast<std::size_t>(pos - d.categories.begin());
      if (head.kind == HeadKind::kClassification) {
        labels.categorical_targets[head.slot] = index;
      } else {
        labels.continuous_targets[head.slot] = d.numeric_label(index);
      }
    } else {
      auto v = parse_number(raw);
      if (!v) throw EncodeError("non-finite or unparsable value '" + raw + "' for IAP '" + d.name + "'");
      labels.continuous_targets[head.slot] = *v;
    }
  }
  return labels;
}

std::vector<std::size_t> rank_categories(std::span<const double> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  return order;
}

const DecodedHead& DecodedPrediction::at(std::string_view name) const {
  for (const auto& h : heads) {
    if (h.name == name) return h;
  }
  throw SchemaError("decoded prediction has no IAP '" + std::string(name) + "'");
}

ValueMap DecodedPrediction::values() const {
  ValueMap out;
  for (const auto& h : heads) {
    out[h.name] = h.kind == HeadKind::kClassification ? h.label : format_double(h.value);
  }
  return out;
}

DecodedPrediction decode_prediction(const PredictionVector& pred, const IapSchema& schema) {
  if (pred.raw().size() != schema.output_width()) {
    throw ShapeError("prediction length " + std::to_string(pred.raw().size()) +
                     " does not match schema width " + std::to_string(schema.output_width()));
  }
  DecodedPrediction out;
  out.heads.reserve(schema.heads().size());
  for (const auto& head : schema.heads()) {
    const auto& d = schema.descriptor(head);
    DecodedHead h;
    h.name = d.name;
    h.kind = head.kind;
    if (head.kind == HeadKind::kClassification) {
      h.ranking = rank_categories(pred.logits(head));
      h.category = h.ranking.front();
      h.label = d.categories[h.category];
      h.value = static_cast<double>(h.category);
    } else {
      h.value = pred.value(head);
      if (d.regressed()) {
        double best = INFINITY;
        for (std::size_t c = 0; c < d.categories.size(); ++c) {
          double dist = std::abs(d.numeric_label(c) - h.value);
          if (dist < best) {
            best = dist;
            h.category = c;
          }
        }
        h.label = d.categories[h.category];
      } else {
        h.label = format_double(h.value);
      }
    }
    out.heads.push_back(std::move(h));
  }
  return out;
}

PredictionVector one_hot(const LabelVector& labels, const IapSchema& schema) {
  std::vector<double> raw(schema.output_width(), 0.0);
  for (const auto& head : schema.heads()) {
    if (head.kind == HeadKind::kClassification) {
      raw[head.offset + labels.categorical_targets.at(head.slot)] = 1.0;
    } else {
      raw[head.offset] = labels.continuous_targets.at(head.slot);
    }
  }
  return PredictionVector(schema, std::move(raw));
}

ValueMap label_values(const LabelVector& labels, const IapSchema& schema) {
  ValueMap out;
  for (const auto& head : schema.heads()) {
    const auto& d = schema.descriptor(head);
    if (head.kind == HeadKind::kClassification) {
      out[d.name] = d.categories.at(labels.categorical_targets.at(head.slot));
    } else if (d.regressed()) {
      double v = labels.continuous_targets.at(head.slot);
      out[d.name] = format_double(v);
      for (std::size_t c = 0; c < d.categories.size(); ++c) {
        if (d.numeric_label(c) == v) out[d.name] = d.categories[c];
      }
    } else {
      out[d.name] = format_double(labels.continuous_targets.at(head.slot));
    }
  }
  return out;
}

IapSchema apply_regression_variant(const IapSchema& schema, std::span<const std::string> names) {
  auto descriptors = schema.descriptors();
  for (const auto& name : names) {
    auto& d = descriptors[schema.index_of(name)];
    if (!d.is_categorical()) throw SchemaError("IAP '" + name + "' is already continuous");
    if (!d.has_numeric_labels()) {
      throw SchemaError("IAP '" + name + "' has non-numeric category labels");
    }
    d.treat_as_continuous = true;
  }
  return IapSchema::build(std::move(descriptors));
}

IapSchema revert_regression_variant(const IapSchema& schema) {
  auto descriptors = schema.descriptors();
  for (auto& d : descriptors) d.treat_as_continuous = false;
  return IapSchema::build(std::move(descriptors));
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ---- schema documents -----------------------------------------------------

IapSchema parse_schema(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema document: ") + e.what());
  }
  if (!doc.contains("descriptors") || !doc["descriptors"].is_array()) {
    throw SchemaError("schema document lacks a 'descriptors' array");
  }
  std::vector<IapDescriptor> descriptors;
  try {
    for (const auto& entry : doc["descriptors"]) {
      IapDescriptor d;
      d.name = entry.at("name").get<std::string>();
      const auto kind = entry.at("kind").get<std::string>();
      if (kind == "categorical") {
        d.kind = IapKind::kCategorical;
        d.categories = entry.at("categories").get<std::vector<std::string>>();
      } else if (kind == "continuous") {
        d.kind = IapKind::kContinuous;
        if (entry.contains("categories")) {
          throw SchemaError("continuous IAP '" + d.name + "' must not list categories");
        }
      } else {
        throw SchemaError("IAP '" + d.name + "' has unknown kind '" + kind + "'");
      }
      d.unit = entry.value("unit", "");
      d.treat_as_continuous = entry.value("treat_as_continuous", false);
      if (entry.contains("range")) {
        auto r = entry["range"].get<std::vector<double>>();
        if (r.size() != 2 || !(r[0] < r[1])) {
          throw SchemaError("IAP '" + d.name + "' has an invalid range");
        }
        d.range = std::make_pair(r[0], r[1]);
      }
      descriptors.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema document: ") + e.what());
  }
  return IapSchema::build(std::move(descriptors));
}

IapSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str());
}

std::string dump_schema(const IapSchema& schema) {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["fingerprint"] = schema.fingerprint();
  auto& list = doc["descriptors"] = nlohmann::ordered_json::array();
  for (const auto& d : schema.descriptors()) {
    nlohmann::ordered_json e;
    e["name"] = d.name;
    e["kind"] = d.is_categorical() ? "categorical" : "continuous";
    if (d.is_categorical()) e["categories"] = d.categories;
    if (!d.unit.empty()) e["unit"] = d.unit;
    if (d.treat_as_continuous) e["treat_as_continuous"] = true;
    if (d.range) e["range"] = {d.range->first, d.range->second};
    list.push_back(std::move(e));
  }
  std::size_t categorical_units = 0;
  for (const auto& h : schema.heads()) {
    if (h.kind == HeadKind::kClassification) categorical_units += h.width;
  }
  std::ostringstream out;
  out << "// iapnet schema: K=" << schema.num_categorical() << " categorical heads ("
      << categorical_units << " units), M=" << schema.num_continuous()
      << " continuous heads, output width " << schema.output_width() << "\n";
  out << doc.dump(2) << "\n";
  return out.str();
}

void save_schema(const IapSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file " + path.string());
  out << dump_schema(schema);
}

namespace {

IapDescriptor categorical(std::string name, std::vector<std::string> cats, std::string unit = "") {
  IapDescriptor d;
  d.name = std::move(name);
  d.kind = IapKind::kCategorical;
  d.categories = std::move(cats);
  d.unit = std::move(unit);
  return d;
}

IapDescriptor continuous(std::string name, std::string unit, double lo, double hi) {
  IapDescriptor d;
  d.name = std::move(name);
  d.kind = IapKind::kContinuous;
  d.unit = std::move(unit);
  d.range = std::make_pair(lo, hi);
  return d;
}

}  // namespace

IapSchema table1_schema() {
  std::vector<std::string> thickness = {"1",   "1.1", "1.2", "1.3", "1.4", "1.5", "1.6",
                                        "1.7", "1.8", "1.9", "2",   "2.2", "2.4", "2.5",
                                        "2.6", "2.8", "3",   "3.2", "3.5", "4",   "5"};
  std::vector<std::string> fov;
  for (int cm = 260; cm <= 520; cm += 10) fov.push_back(std::to_string(cm));
  return IapSchema::build({
      categorical("manufacturer", {"GE", "Siemens"}),
      categorical("scanner_model", {"Avanto", "Signa HDx", "Signa HDxt", "Signa Excite",
                                    "Optima MR450w", "Skyra", "Trio Tim", "Espree"}),
      categorical("scan_options", {"PFP/FS", "PFP/SFS", "FS", "SFS", "PFP", "FAST/FS",
                                   "ACC/FS", "ACC/SFS", "EDR/FS"}),
      categorical("field_strength", {"1", "1.494", "1.5", "2.894", "3"}, "T"),
      categorical("patient_position", {"FFP", "HFP"}),
      categorical("contrast_agent",
                  {"Gadavist", "MultiHance", "Magnevist", "Omniscan", "ProHance", "Dotarem"}),
      categorical("acquisition_matrix", {"448x448", "384x360", "320x320", "512x512", "384x384",
                                         "256x256", "448x336", "512x384", "320x288", "416x416"}),
      categorical("slice_thickness", thickness, "mm"),
      categorical("flip_angle", {"8", "10", "12", "15"}, "deg"),
      categorical("fov_computed", fov, "cm"),
      continuous("tr", "ms", 3.54, 7.40),
      continuous("te", "ms", 1.25, 2.76),
  });
}

IapSchema reduced_schema() {
  return IapSchema::build({
      categorical("manufacturer", {"GE", "Siemens"}),
      categorical("field_strength", {"1", "1.5", "3"}, "T"),
      categorical("patient_position", {"FFP", "HFP"}),
      categorical("contrast_agent", {"Gadavist", "MultiHance", "Magnevist"}),
      categorical("slice_thickness", {"1", "2", "3"}, "mm"),
      categorical("flip_angle", {"8", "10", "12", "15"}, "deg"),
      continuous("tr", "ms", 3.54, 7.40),
      continuous("te", "ms", 1.25, 2.76),
  });
}

}  // namespace iapnet
