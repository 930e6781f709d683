#include "iapnet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "iapnet/error.hpp"

namespace iapnet {

LossBreakdown compute_loss(std::span<const double> raw, std::size_t batch, std::span<const LabelVector> labels,
                           const IapSchema& schema, double lambda, double eta, std::vector<double>* grad) {
  if (lambda < 0.0 || eta < 0.0) throw Error("loss weights lambda and eta must be non-negative");
  if (batch == 0) throw ShapeError("loss over an empty batch");
  const std::size_t width = schema.output_width();
  if (raw.size() != batch * width) throw ShapeError("prediction batch does not match schema width");
  if (labels.size() != batch) throw ShapeError("prediction and label batch sizes differ");
  if (grad) grad->assign(raw.size(), 0.0);

  const double inv_batch = 1.0 / static_cast<double>(batch);
  LossBreakdown out;
  std::vector<double> probs;
  for (const auto& head : schema.heads()) {
    HeadLoss term{schema.descriptor(head).name, head.kind, 0.0};
    for (std::size_t i = 0; i < batch; ++i) {
      const double* row = raw.data() + i * width + head.offset;
      const auto& label = labels[i];
      if (head.kind == HeadKind::kClassification) {
        const std::size_t target = label.categorical_targets.at(head.slot);
        if (target >= head.width) throw ShapeError("class index out of range for head " + term.name);
        const double mx = *std::max_element(row, row + head.width);
        double z = 0.0;
        probs.resize(head.width);
        for (std::size_t c = 0; c < head.width; ++c) {
          probs[c] = std::exp(row[c] - mx);
          z += probs[c];
        }
        term.value += (std::log(z) + mx - row[target]) * inv_batch;
        if (grad) {
          double* g = grad->data() + i * width + head.offset;
          for (std::size_t c = 0; c < head.width; ++c) {
            g[c] = lambda * inv_batch * (probs[c] / z - (c == target ? 1.0 : 0.0));
          }
        }
      } else {
        const double err = row[0] - label.continuous_targets.at(head.slot);
        term.value += err * err * inv_batch;
        if (grad) grad->data()[i * width + head.offset] = eta * inv_batch * 2.0 * err;
      }
    }
    out.total += (head.kind == HeadKind::kClassification ? lambda : eta) * term.value;
    out.terms.push_back(std::move(term));
  }
  return out;
}

LossBreakdown compute_loss(std::span<const PredictionVector> preds, std::span<const LabelVector> labels,
                           const IapSchema& schema, double lambda, double eta) {
  std::vector<double> raw;
  raw.reserve(preds.size() * schema.output_width());
  for (const auto& p : preds) {
    if (p.raw().size() != schema.output_width()) throw ShapeError("prediction width does not match schema");
    raw.insert(raw.end(), p.raw().begin(), p.raw().end());
  }
  return compute_loss(raw, preds.size(), labels, schema, lambda, eta);
}

}  // namespace iapnet
