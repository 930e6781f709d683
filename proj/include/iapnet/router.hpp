#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "iapnet/ingestion.hpp"
#include "iapnet/model.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

enum class CompareOp { kEq, kNe, kLt, kLe, kGt, kGe };

std::string to_string(CompareOp op);
CompareOp parse_compare_op(const std::string& text);

// Equality compares numerically when both sides parse as numbers and as
// strings otherwise; ordering operators require numbers. A missing IAP never
// matches.
struct Condition {
  std::string iap;
  CompareOp op = CompareOp::kEq;
  std::string value;

  bool matches(const ValueMap& values) const;
};

struct RouteRule {
  std::vector<Condition> when;  // conjunction
  std::string model;
};

// JSON form:
//   {"rules": [{"when": [{"iap": "manufacturer", "op": "==", "value": "GE"}], "model": "ge"}],
//    "default": "ge"}
// A rule may also give a single condition inline: {"iap": ..., "op": ..., "value": ..., "model": ...}.
struct RouteTable {
  std::vector<RouteRule> rules;
  std::string default_model;

  // First matching rule wins; otherwise the default.
  const std::string& route(const ValueMap& values) const;
  std::vector<std::string> model_ids() const;

  static RouteTable parse(const std::string& text);
  static RouteTable load(const std::filesystem::path& path);
  std::string to_json() const;
};

// One exact-match rule per category of `iap`, each naming the model id equal
// to the category label; the default is the first category.
RouteTable exact_match_table(const IapDescriptor& iap);

// Binary downstream task: a single categorical head {negative, positive}.
IapSchema downstream_schema();
LabelVector downstream_labels(int label);

struct DomainModel {
  std::string id;
  std::string domain_value;
  Checkpoint checkpoint;
};

// One binary classifier per category of the domain key, each trained only on
// its domain's records (85/15 patient split for checkpoint selection). Throws
// Error for a non-categorical key, a domain without records, unlabelled
// records or single-class labels.
std::vector<DomainModel> train_domain_models(std::span<const SliceRecord> records, const std::string& domain_key,
                                             const IapSchema& iap_schema, const TrainConfig& config);

// Decoded IAP values for a batch of raw images.
using IapPredictor = std::function<std::vector<ValueMap>(std::span<const SliceRecord>)>;

IapPredictor checkpoint_predictor(const PredictorModel& model);
// Returns each record's ground-truth values; routes with it are oracle routes.
IapPredictor truth_predictor();

std::string route(const Image& image, const PredictorModel& iap_model, const RouteTable& table);

struct FixedModelResult {
  std::string id;
  std::string domain_value;
  double accuracy_all = 0.0;
  double accuracy_in_domain = 0.0;
  std::size_t in_domain_count = 0;
};

struct RoutingExperimentResult {
  std::vector<FixedModelResult> fixed;
  double routed_accuracy = 0.0;
  double oracle_accuracy = 0.0;
  double route_agreement = 0.0;  // share of images routed as the oracle would
  std::size_t samples = 0;
  std::vector<std::string> routed_models;  // per record
  std::vector<std::string> oracle_models;

  std::string to_text() const;
  std::string to_json() const;
};

RoutingExperimentResult run_routing_experiment(std::span<const SliceRecord> records, const IapPredictor& predictor,
                                               std::span<const DomainModel> models, const RouteTable& table,
                                               const std::string& domain_key);

}  // namespace iapnet
