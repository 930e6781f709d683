#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iapnet/ingestion.hpp"
#include "iapnet/model.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

// Fraction of samples whose true class is among the first k ranked
// categories. Throws MetricError when k is 0 or exceeds a ranking's length.
double topk_accuracy(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truth,
                     std::size_t k);

// Mean squared difference in native units. Throws MetricError on empty or
// mismatched input.
double head_mse(std::span<const double> predictions, std::span<const double> truth);

// |pred - truth| / |truth| < threshold. Throws MetricError when truth is 0.
bool relative_error_correct(double prediction, double truth, double threshold = 0.02);

struct HeadReport {
  std::string name;
  HeadKind kind = HeadKind::kClassification;
  std::size_t categories = 0;  // 0 for continuous IAPs
  bool regressed = false;      // categorical IAP trained as continuous
  std::string unit;
  std::optional<double> top1;
  std::optional<double> top2;  // absent when the head has 2 categories
  std::optional<double> mse;
  std::optional<double> within_tolerance;  // share with relative error < 2%
};

struct EvalReport {
  std::vector<HeadReport> heads;  // one row per IAP, schema order
  std::size_t samples = 0;
  std::string schema_fingerprint;

  const HeadReport& at(const std::string& name) const;
  std::string to_json() const;
  std::string to_text() const;
};

EvalReport build_report(std::span<const PredictionVector> predictions, std::span<const LabelVector> labels,
                        const IapSchema& schema);

// Preprocesses and decodes every record with the checkpoint's model. Throws
// CheckpointError on a fingerprint mismatch and MetricError on an empty set.
EvalReport build_report(const Checkpoint& checkpoint, std::span<const SliceRecord> records, const IapSchema& schema);

}  // namespace iapnet
