#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace iapnet {

enum class IapKind { kCategorical, kContinuous };

// One acquisition parameter. Categorical descriptors own an ordered
// vocabulary whose positions are the class indices used everywhere else.
struct IapDescriptor {
  std::string name;
  IapKind kind = IapKind::kCategorical;
  std::vector<std::string> categories;  // categorical only, >= 2 unique labels
  std::string unit;                     // continuous (or regressed) unit
  bool treat_as_continuous = false;     // regression-variant override
  // Sampling bounds used by the phantom generator for continuous IAPs.
  std::optional<std::pair<double, double>> range;

  bool is_categorical() const { return kind == IapKind::kCategorical; }
  bool regressed() const { return is_categorical() && treat_as_continuous; }
  bool has_numeric_labels() const;
  double numeric_label(std::size_t category) const;

  bool operator==(const IapDescriptor&) const = default;
};

enum class HeadKind { kClassification, kRegression };

// Slice of the flat output vector owned by one descriptor.
struct Head {
  std::size_t descriptor = 0;
  std::size_t offset = 0;
  std::size_t width = 0;
  HeadKind kind = HeadKind::kClassification;
  // Position inside LabelVector::categorical_targets or continuous_targets.
  std::size_t slot = 0;
};

class IapSchema {
 public:
  IapSchema() = default;

  // Heads are laid out in declaration order. Throws SchemaError on
  // duplicate names or malformed descriptors.
  static IapSchema build(std::vector<IapDescriptor> descriptors);

  const std::vector<IapDescriptor>& descriptors() const { return descriptors_; }
  const std::vector<Head>& heads() const { return heads_; }
  const IapDescriptor& descriptor(const Head& head) const {
    return descriptors_[head.descriptor];
  }

  std::size_t num_categorical() const { return num_categorical_; }  // K
  std::size_t num_continuous() const { return num_continuous_; }    // M
  std::size_t output_width() const { return width_; }
  std::size_t size() const { return descriptors_.size(); }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws SchemaError

  // Stable 64-bit digest of the layout, rendered as 16 hex digits.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::vector<IapDescriptor> descriptors_;
  std::vector<Head> heads_;
  std::size_t num_categorical_ = 0;
  std::size_t num_continuous_ = 0;
  std::size_t width_ = 0;
  std::string fingerprint_;
};

IapSchema build_schema(std::vector<IapDescriptor> descriptors);

struct LabelVector {
  std::vector<std::size_t> categorical_targets;
  std::vector<double> continuous_targets;

  bool operator==(const LabelVector&) const = default;
};

class PredictionVector {
 public:
  PredictionVector() = default;
  PredictionVector(const IapSchema& schema, std::vector<double> raw);

  std::span<const double> raw() const { return raw_; }
  std::span<const double> logits(const Head& head) const {
    return std::span<const double>(raw_).subspan(head.offset, head.width);
  }
  double value(const Head& head) const { return raw_[head.offset]; }

 private:
  std::vector<double> raw_;
};

using ValueMap = std::map<std::string, std::string>;

// Raw manifest strings -> targets. Throws EncodeError on a missing IAP, an
// unknown category label or a non-finite continuous value.
LabelVector encode_labels(const ValueMap& raw_values, const IapSchema& schema);

struct DecodedHead {
  std::string name;
  HeadKind kind = HeadKind::kClassification;
  std::size_t category = 0;  // argmax (classification) or nearest label (regressed)
  std::string label;
  double value = 0.0;  // continuous prediction in native units
  std::vector<std::size_t> ranking;  // classification: categories by descending logit
};

struct DecodedPrediction {
  std::vector<DecodedHead> heads;

  const DecodedHead& at(std::string_view name) const;
  // name -> label for classification heads, value (round-trippable %.17g)
  // for regression heads.
  ValueMap values() const;
};

// Argmax decoding; ties resolve to the lowest category index.
DecodedPrediction decode_prediction(const PredictionVector& pred, const IapSchema& schema);

// Categories ranked by descending score, ties by ascending index.
std::vector<std::size_t> rank_categories(std::span<const double> logits);

// One-hot logits for classification heads and exact targets for regression
// heads; decoding it reproduces the labels.
PredictionVector one_hot(const LabelVector& labels, const IapSchema& schema);

// Rebuilds a value map from encoded labels (continuous as %.17g).
ValueMap label_values(const LabelVector& labels, const IapSchema& schema);

// Regression variant: the named categorical IAPs become width-1 heads that
// regress the numeric value of their label.
IapSchema apply_regression_variant(const IapSchema& schema, std::span<const std::string> names);
IapSchema revert_regression_variant(const IapSchema& schema);

std::string format_double(double v);

// JSON schema documents (comments allowed). The writer prefixes a comment
// with the resulting output width.
IapSchema parse_schema(const std::string& text);
IapSchema load_schema(const std::filesystem::path& path);
std::string dump_schema(const IapSchema& schema);
void save_schema(const IapSchema& schema, const std::filesystem::path& path);

// Ten categorical IAPs with the published cardinalities plus TR and TE.
// Vocabularies beyond the published examples are synthetic.
IapSchema table1_schema();
// Desk-scale schema: six categorical IAPs with 2-4 categories plus TR and TE.
IapSchema reduced_schema();

}  // namespace iapnet
