#include "iapnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "iapnet/error.hpp"
#include "json.hpp"

namespace iapnet {

double topk_accuracy(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truth,
                     std::size_t k) {
  if (rankings.size() != truth.size()) throw MetricError("ranking and label counts differ");
  if (rankings.empty()) throw MetricError("top-k accuracy over an empty set");
  if (k == 0) throw MetricError("k must be at least 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (k > r.size()) {
      throw MetricError("top-" + std::to_string(k) + " requested for a head with " + std::to_string(r.size()) +
                        " categories");
    }
    if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k), truth[i]) != r.begin() + static_cast<std::ptrdiff_t>(k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double head_mse(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.size() != truth.size()) throw MetricError("prediction and target counts differ");
  if (predictions.empty()) throw MetricError("MSE over an empty set");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!std::isfinite(predictions[i]) || !std::isfinite(truth[i])) throw MetricError("non-finite value in MSE input");
    const double d = predictions[i] - truth[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

bool relative_error_correct(double prediction, double truth, double threshold) {
  if (truth == 0.0) throw MetricError("relative error is undefined for a zero target");
  return std::abs(prediction - truth) / std::abs(truth) < threshold;
}

const HeadReport& EvalReport::at(const std::string& name) const {
  for (const auto& h : heads) {
    if (h.name == name) return h;
  }
  throw MetricError("report has no row for '" + name + "'");
}

EvalReport build_report(std::span<const PredictionVector> predictions, std::span<const LabelVector> labels,
                        const IapSchema& schema) {
  if (predictions.size() != labels.size()) throw MetricError("prediction and label counts differ");
  if (predictions.empty()) throw MetricError("evaluation over an empty test set");
  for (const auto& p : predictions) {
    if (p.raw().size() != schema.output_width()) throw ShapeError("prediction width does not match schema");
  }

  EvalReport report;
  report.samples = predictions.size();
  report.schema_fingerprint = schema.fingerprint();
  for (const auto& head : schema.heads()) {
    const auto& d = schema.descriptor(head);
    HeadReport row;
    row.name = d.name;
    row.kind = head.kind;
    row.categories = d.is_categorical() ? d.categories.size() : 0;
    row.regressed = d.regressed();
    row.unit = d.unit;
    if (head.kind == HeadKind::kClassification) {
      std::vector<std::vector<std::size_t>> ranks;
      std::vector<std::size_t> truth;
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        ranks.push_back(rank_categories(predictions[i].logits(head)));
        truth.push_back(labels[i].categorical_targets.at(head.slot));
      }
      row.top1 = topk_accuracy(ranks, truth, 1);
      if (head.width > 2) row.top2 = topk_accuracy(ranks, truth, 2);
    } else {
      std::vector<double> pred, truth;
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        pred.push_back(predictions[i].value(head));
        truth.push_back(labels[i].continuous_targets.at(head.slot));
      }
      row.mse = head_mse(pred, truth);
      if (std::none_of(truth.begin(), truth.end(), [](double t) { return t == 0.0; })) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) ok += relative_error_correct(pred[i], truth[i]) ? 1 : 0;
        row.within_tolerance = static_cast<double>(ok) / static_cast<double>(pred.size());
      }
    }
    report.heads.push_back(std::move(row));
  }
  return report;
}

EvalReport build_report(const Checkpoint& checkpoint, std::span<const SliceRecord> records, const IapSchema& schema) {
  require_compatible(checkpoint, schema);
  if (records.empty()) throw MetricError("evaluation over an empty test set");
  const Dataset data = load_dataset(records, schema, checkpoint.model.input_size());
  const auto preds = checkpoint.model.forward(std::span<const Image>(data.images));
  return build_report(preds, data.labels, schema);
}

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string mse_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_fingerprint"] = schema_fingerprint;
  j["samples"] = samples;
  auto& rows = j["heads"] = nlohmann::ordered_json::array();
  for (const auto& h : heads) {
    nlohmann::ordered_json r;
    r["name"] = h.name;
    r["kind"] = h.kind == HeadKind::kClassification ? "classification" : "regression";
    r["categories"] = h.categories;
    r["regressed"] = h.regressed;
    r["unit"] = h.unit;
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    r["top1"] = opt(h.top1);
    r["top2"] = opt(h.top2);
    r["mse"] = opt(h.mse);
    r["within_2pct"] = opt(h.within_tolerance);
    rows.push_back(std::move(r));
  }
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "schema " << schema_fingerprint << ", " << samples << " slices\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %14s %9s %9s %14s %11s\n", "IAP", "No. categories", "Top-1", "Top-2", "MSE",
                "Within 2%");
  out << line;
  bool any_regressed = false;
  for (const auto& h : heads) {
    const std::string cats = h.categories ? std::to_string(h.categories) : "-";
    std::string top1 = h.top1 ? percent(*h.top1) : "";
    std::string top2 = h.top2 ? percent(*h.top2) : (h.kind == HeadKind::kClassification ? "N/A" : "");
    std::string mse;
    if (h.mse) {
      mse = mse_text(*h.mse);
      if (!h.unit.empty()) mse += " " + h.unit + "^2";
      if (h.regressed) {
        mse += "*";
        any_regressed = true;
      }
    }
    const std::string tol = h.within_tolerance ? percent(*h.within_tolerance) : "";
    std::snprintf(line, sizeof line, "%-22s %14s %9s %9s %14s %11s\n", h.name.c_str(), cats.c_str(), top1.c_str(),
                  top2.c_str(), mse.c_str(), tol.c_str());
    out << line;
  }
  if (any_regressed) out << "* categorical IAP trained as continuous\n";
  return out.str();
}

}  // namespace iapnet
