#pragma once

#include <span>
#include <string>
#include <vector>

#include "iapnet/schema.hpp"

namespace iapnet {

struct HeadLoss {
  std::string name;
  HeadKind kind = HeadKind::kClassification;
  double value = 0.0;  // unweighted: mean CE or mean squared error over the batch
};

struct LossBreakdown {
  double total = 0.0;  // lambda * sum(CE terms) + eta * sum(MSE terms)
  std::vector<HeadLoss> terms;  // one per head, schema order
};

// Multi-task objective over a batch. Each classification head contributes
// the batch-mean softmax cross-entropy over its own logits, each regression
// head the batch-mean squared error in native units. When `grad` is given it
// receives dTotal/d(raw) with the same row-major [batch x width] layout.
LossBreakdown compute_loss(std::span<const double> raw, std::size_t batch, std::span<const LabelVector> labels,
                           const IapSchema& schema, double lambda, double eta,
                           std::vector<double>* grad = nullptr);

LossBreakdown compute_loss(std::span<const PredictionVector> preds, std::span<const LabelVector> labels,
                           const IapSchema& schema, double lambda, double eta);

}  // namespace iapnet
