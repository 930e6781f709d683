#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iapnet/image.hpp"
#include "iapnet/ingestion.hpp"
#include "iapnet/loss.hpp"
#include "iapnet/network.hpp"
#include "iapnet/schema.hpp"

namespace iapnet {

struct TrainConfig {
  std::size_t batch_size = 512;
  std::size_t epochs = 100;
  double learning_rate = 0.001;
  double weight_decay = 0.0001;
  double lambda = 1.0;  // weight of the summed cross-entropy terms
  double eta = 1.0;     // weight of the summed squared-error terms
  std::uint64_t seed = 0;
  std::string device = "cpu";
  BackboneScale backbone_scale = BackboneScale::kFull;
  bool pretrained = false;  // reserved; only random initialisation is implemented
  bool cosine_schedule = false;  // anneal the learning rate to zero over all steps

  void validate() const;
};

// Optimiser recipe of the original experiments on the full backbone.
TrainConfig paper_preset();
// Desk-scale recipe: tiny backbone, 64x64 inputs, batch 16, 30 epochs, cosine schedule.
TrainConfig tiny_preset();
TrainConfig preset(const std::string& name);

// Preprocessed images with their encoded targets.
struct Dataset {
  std::vector<Image> images;
  std::vector<LabelVector> labels;

  std::size_t size() const { return images.size(); }
};

// Loads and preprocesses the records' images in parallel.
std::vector<Image> load_images(std::span<const SliceRecord> records, std::size_t input_size);

// Loads, preprocesses (in parallel) and encodes the records.
Dataset load_dataset(std::span<const SliceRecord> records, const IapSchema& schema, std::size_t input_size);

// Single-network multi-head predictor bound to a schema.
class PredictorModel {
 public:
  PredictorModel() = default;
  PredictorModel(IapSchema schema, BackboneConfig backbone, std::uint64_t seed);

  const IapSchema& schema() const { return schema_; }
  const BackboneConfig& backbone() const { return network_.config(); }
  std::size_t input_size() const { return network_.config().input_size; }
  Network& network() { return network_; }
  const Network& network() const { return network_; }

  // One forward pass per image yielding every head. Images must already be
  // preprocessed to input_size x input_size.
  std::vector<PredictionVector> forward(std::span<const Image> images) const;
  std::vector<PredictionVector> forward(std::span<const Image* const> images) const;

 private:
  IapSchema schema_;
  Network network_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val_loss = 0.0;
  bool improved = false;
  std::vector<double> train_terms;
  std::vector<double> val_terms;
};

struct TrainingCurve {
  std::vector<std::string> head_names;
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct Checkpoint {
  PredictorModel model;
  std::string schema_fingerprint;
  double best_val_loss = 0.0;
  std::size_t epoch = 0;
  TrainConfig config;
  TrainingCurve curve;
  std::string metadata_json = "{}";  // free-form provenance (split, manifest, ...)
};

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  // When set, the best checkpoint and the curve are persisted here as
  // training progresses.
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> curve_path;
};

// Adam with L2 weight decay; after every epoch the validation loss is
// computed and the checkpoint replaced whenever it strictly improves.
// Throws NonFiniteLossError naming the offending head.
Checkpoint train(const TrainConfig& config, const IapSchema& schema, const Dataset& train_set,
                 const Dataset& val_set, const TrainOptions& options = {});

// Mean loss over a dataset in eval mode (batched forward).
LossBreakdown evaluate_loss(const PredictorModel& model, const Dataset& data, double lambda, double eta,
                            std::size_t batch_size = 64);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Fails with CheckpointError when the stored fingerprint differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const IapSchema& expected);
void require_compatible(const Checkpoint& checkpoint, const IapSchema& schema);

std::string train_config_json(const TrainConfig& config);

}  // namespace iapnet
