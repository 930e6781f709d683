#include "iapnet/router.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "iapnet/error.hpp"
#include "json.hpp"

namespace iapnet {

namespace {

std::optional<double> as_number(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

constexpr std::pair<CompareOp, const char*> kOps[] = {
    {CompareOp::kEq, "=="}, {CompareOp::kNe, "!="}, {CompareOp::kLt, "<"},
    {CompareOp::kLe, "<="}, {CompareOp::kGt, ">"},  {CompareOp::kGe, ">="},
};

std::size_t argmax_class(const PredictionVector& p, const IapSchema& schema) {
  return rank_categories(p.logits(schema.heads()[0]))[0];
}

}  // namespace

std::string to_string(CompareOp op) {
  for (auto [o, s] : kOps) {
    if (o == op) return s;
  }
  return "?";
}

CompareOp parse_compare_op(const std::string& text) {
  for (auto [o, s] : kOps) {
    if (text == s) return o;
  }
  throw Error("unknown comparison operator '" + text + "'");
}

bool Condition::matches(const ValueMap& values) const {
  auto it = values.find(iap);
  if (it == values.end() || it->second.empty()) return false;
  const auto lhs = as_number(it->second), rhs = as_number(value);
  switch (op) {
    case CompareOp::kEq: return lhs && rhs ? *lhs == *rhs : it->second == value;
    case CompareOp::kNe: return lhs && rhs ? *lhs != *rhs : it->second != value;
    default: break;
  }
  if (!rhs) throw Error("ordering comparison on non-numeric value '" + value + "'");
  if (!lhs) throw Error("IAP '" + iap + "' value '" + it->second + "' is not numeric");
  switch (op) {
    case CompareOp::kLt: return *lhs < *rhs;
    case CompareOp::kLe: return *lhs <= *rhs;
    case CompareOp::kGt: return *lhs > *rhs;
    case CompareOp::kGe: return *lhs >= *rhs;
    default: return false;
  }
}

const std::string& RouteTable::route(const ValueMap& values) const {
  for (const auto& rule : rules) {
    if (std::all_of(rule.when.begin(), rule.when.end(), [&](const Condition& c) { return c.matches(values); })) {
      return rule.model;
    }
  }
  return default_model;
}

std::vector<std::string> RouteTable::model_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : rules) {
    if (std::find(ids.begin(), ids.end(), r.model) == ids.end()) ids.push_back(r.model);
  }
  if (std::find(ids.begin(), ids.end(), default_model) == ids.end()) ids.push_back(default_model);
  return ids;
}

RouteTable RouteTable::parse(const std::string& text) {
  RouteTable t;
  try {
    const auto j = nlohmann::json::parse(text, nullptr, true, true);
    auto condition = [](const nlohmann::json& c) {
      Condition cond;
      cond.iap = c.at("iap").get<std::string>();
      cond.op = parse_compare_op(c.value("op", std::string("==")));
      const auto& v = c.at("value");
      cond.value = v.is_string() ? v.get<std::string>() : v.dump();
      if (cond.op != CompareOp::kEq && cond.op != CompareOp::kNe && !as_number(cond.value)) {
        throw Error("ordering comparison needs a numeric value, got '" + cond.value + "'");
      }
      return cond;
    };
    for (const auto& r : j.at("rules")) {
      RouteRule rule;
      rule.model = r.at("model").get<std::string>();
      if (r.contains("when")) {
        for (const auto& c : r.at("when")) rule.when.push_back(condition(c));
      } else {
        rule.when.push_back(condition(r));
      }
      if (rule.when.empty()) throw Error("route rule for '" + rule.model + "' has no conditions");
      t.rules.push_back(std::move(rule));
    }
    t.default_model = j.at("default").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed route table: ") + e.what());
  }
  if (t.default_model.empty()) throw Error("route table needs a default model");
  return t;
}

RouteTable RouteTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open route table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RouteTable::to_json() const {
  nlohmann::ordered_json j;
  auto& rs = j["rules"] = nlohmann::ordered_json::array();
  for (const auto& r : rules) {
    nlohmann::ordered_json rule;
    auto& when = rule["when"] = nlohmann::ordered_json::array();
    for (const auto& c : r.when) when.push_back({{"iap", c.iap}, {"op", to_string(c.op)}, {"value", c.value}});
    rule["model"] = r.model;
    rs.push_back(std::move(rule));
  }
  j["default"] = default_model;
  return j.dump(2);
}

RouteTable exact_match_table(const IapDescriptor& iap) {
  if (!iap.is_categorical()) throw Error("exact-match routing needs a categorical IAP");
  RouteTable t;
  for (const auto& c : iap.categories) t.rules.push_back({{{iap.name, CompareOp::kEq, c}}, c});
  t.default_model = iap.categories.front();
  return t;
}

IapSchema downstream_schema() {
  IapDescriptor d;
  d.name = "downstream";
  d.categories = {"negative", "positive"};
  return build_schema({d});
}

LabelVector downstream_labels(int label) {
  if (label != 0 && label != 1) throw EncodeError("downstream label must be 0 or 1");
  LabelVector l;
  l.categorical_targets = {static_cast<std::size_t>(label)};
  return l;
}

std::vector<DomainModel> train_domain_models(std::span<const SliceRecord> records, const std::string& domain_key,
                                             const IapSchema& iap_schema, const TrainConfig& config) {
  const auto& key = iap_schema.descriptors()[iap_schema.index_of(domain_key)];
  if (!key.is_categorical()) throw Error("domain key '" + domain_key + "' must be a categorical IAP");
  const IapSchema schema = downstream_schema();
  std::vector<DomainModel> out;
  for (const auto& value : key.categories) {
    std::vector<SliceRecord> domain;
    for (const auto& r : records) {
      auto it = r.iap_values.find(domain_key);
      if (it != r.iap_values.end() && it->second == value) domain.push_back(r);
    }
    if (domain.empty()) throw Error("domain " + domain_key + "=" + value + " has no records");
    std::set<int> classes;
    for (const auto& r : domain) {
      if (!r.downstream_label) throw Error("record " + r.patient_id + " has no downstream label");
      classes.insert(*r.downstream_label);
    }
    if (classes.size() < 2) throw Error("domain " + domain_key + "=" + value + " has single-class downstream labels");

    const auto split = split_by_patient(domain, {0.85, 0.15, 0.0}, config.seed);
    if (split.val.empty()) throw Error("domain " + domain_key + "=" + value + " needs at least two patients");
    auto load = [&](std::span<const SliceRecord> rs) {
      Dataset d;
      d.images = load_images(rs, backbone_for(config.backbone_scale).input_size);
      for (const auto& r : rs) d.labels.push_back(downstream_labels(*r.downstream_label));
      return d;
    };
    const Dataset train_set = load(split.train), val_set = load(split.val);
    DomainModel m;
    m.id = value;
    m.domain_value = value;
    m.checkpoint = train(config, schema, train_set, val_set);
    out.push_back(std::move(m));
  }
  return out;
}

IapPredictor checkpoint_predictor(const PredictorModel& model) {
  return [&model](std::span<const SliceRecord> records) {
    const auto images = load_images(records, model.input_size());
    const auto preds = model.forward(std::span<const Image>(images));
    std::vector<ValueMap> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(decode_prediction(p, model.schema()).values());
    return out;
  };
}

IapPredictor truth_predictor() {
  return [](std::span<const SliceRecord> records) {
    std::vector<ValueMap> out;
    for (const auto& r : records) out.push_back(r.iap_values);
    return out;
  };
}

std::string route(const Image& image, const PredictorModel& iap_model, const RouteTable& table) {
  const Image input = preprocess_image(image, iap_model.input_size());
  const auto preds = iap_model.forward(std::span<const Image>(&input, 1));
  return table.route(decode_prediction(preds[0], iap_model.schema()).values());
}

RoutingExperimentResult run_routing_experiment(std::span<const SliceRecord> records, const IapPredictor& predictor,
                                               std::span<const DomainModel> models, const RouteTable& table,
                                               const std::string& domain_key) {
  if (records.empty()) throw MetricError("routing experiment over an empty test set");
  if (models.empty()) throw Error("routing experiment needs at least one domain model");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < models.size(); ++i) index[models[i].id] = i;
  for (const auto& id : table.model_ids()) {
    if (!index.count(id)) throw Error("route table names unknown model '" + id + "'");
  }
  const IapSchema schema = downstream_schema();
  for (const auto& m : models) require_compatible(m.checkpoint, schema);

  std::vector<int> truth;
  for (const auto& r : records) {
    if (!r.downstream_label) throw Error("record " + r.patient_id + " has no downstream label");
    truth.push_back(*r.downstream_label);
  }

  // Every model classifies every image once; routing then only selects.
  std::map<std::size_t, std::vector<Image>> by_size;
  std::vector<std::vector<std::size_t>> decisions(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& model = models[m].checkpoint.model;
    auto& images = by_size[model.input_size()];
    if (images.empty()) images = load_images(records, model.input_size());
    for (const auto& p : model.forward(std::span<const Image>(images))) decisions[m].push_back(argmax_class(p, schema));
  }

  const auto predicted = predictor(records);
  if (predicted.size() != records.size()) throw Error("IAP predictor returned the wrong number of results");

  RoutingExperimentResult res;
  res.samples = records.size();
  const double n = static_cast<double>(records.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    FixedModelResult f;
    f.id = models[m].id;
    f.domain_value = models[m].domain_value;
    std::size_t hits = 0, in_hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const bool ok = static_cast<int>(decisions[m][i]) == truth[i];
      hits += ok;
      auto it = records[i].iap_values.find(domain_key);
      if (it != records[i].iap_values.end() && it->second == f.domain_value) {
        ++f.in_domain_count;
        in_hits += ok;
      }
    }
    f.accuracy_all = static_cast<double>(hits) / n;
    f.accuracy_in_domain = f.in_domain_count ? static_cast<double>(in_hits) / static_cast<double>(f.in_domain_count) : 0.0;
    res.fixed.push_back(std::move(f));
  }
  std::size_t routed_hits = 0, oracle_hits = 0, agree = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string& routed = table.route(predicted[i]);
    const std::string& oracle = table.route(records[i].iap_values);
    routed_hits += static_cast<int>(decisions[index.at(routed)][i]) == truth[i];
    oracle_hits += static_cast<int>(decisions[index.at(oracle)][i]) == truth[i];
    agree += routed == oracle;
    res.routed_models.push_back(routed);
    res.oracle_models.push_back(oracle);
  }
  res.routed_accuracy = static_cast<double>(routed_hits) / n;
  res.oracle_accuracy = static_cast<double>(oracle_hits) / n;
  res.route_agreement = static_cast<double>(agree) / n;
  return res;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

}  // namespace

std::string RoutingExperimentResult::to_text() const {
  std::ostringstream out;
  char line[256];
  out << samples << " test slices\n";
  std::snprintf(line, sizeof line, "%-34s %18s %18s\n", "Model", "All test images", "Own domain only");
  out << line;
  for (const auto& f : fixed) {
    std::snprintf(line, sizeof line, "%-34s %18s %18s\n", (f.id + " model").c_str(), pct(f.accuracy_all).c_str(),
                  pct(f.accuracy_in_domain).c_str());
    out << line;
  }
  std::snprintf(line, sizeof line, "%-34s %18s\n", "Model chosen by predicted IAPs", pct(routed_accuracy).c_str());
  out << line;
  std::snprintf(line, sizeof line, "%-34s %18s\n", "Model chosen by true IAPs", pct(oracle_accuracy).c_str());
  out << line;
  return out.str();
}

std::string RoutingExperimentResult::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  auto& fx = j["fixed_models"] = nlohmann::ordered_json::array();
  for (const auto& f : fixed) {
    fx.push_back({{"id", f.id},
                  {"domain_value", f.domain_value},
                  {"accuracy_all", f.accuracy_all},
                  {"accuracy_in_domain", f.accuracy_in_domain},
                  {"in_domain_count", f.in_domain_count}});
  }
  j["routed_accuracy"] = routed_accuracy;
  j["oracle_accuracy"] = oracle_accuracy;
  j["route_agreement"] = route_agreement;
  return j.dump(2);
}

}  // namespace iapnet
