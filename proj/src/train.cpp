#include <omp.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "iapnet/error.hpp"
#include "iapnet/model.hpp"
#include "iapnet/random.hpp"

namespace iapnet {

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0) throw Error("batch_size and epochs must be positive");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
  if (!(lambda >= 0.0) || !(eta >= 0.0)) throw Error("lambda and eta must be non-negative");
  if (device != "cpu") throw Error("unsupported device '" + device + "' (only cpu is available)");
  if (pretrained) throw Error("pretrained backbone weights are not available");
}

TrainConfig paper_preset() { return TrainConfig{}; }

TrainConfig tiny_preset() {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = 30;
  c.learning_rate = 0.002;
  c.eta = 100.0;
  c.cosine_schedule = true;
  c.backbone_scale = BackboneScale::kTiny;
  return c;
}

TrainConfig preset(const std::string& name) {
  if (name == "paper" || name == "full") return paper_preset();
  if (name == "tiny") return tiny_preset();
  throw Error("unknown preset '" + name + "' (expected tiny|paper)");
}

std::vector<Image> load_images(std::span<const SliceRecord> records, std::size_t input_size) {
  std::vector<Image> images(records.size());
  std::string first_error;
  const auto n = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      images[static_cast<std::size_t>(i)] = preprocess_image(records[static_cast<std::size_t>(i)].image_path, input_size);
    } catch (const std::exception& e) {
#pragma omp critical
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!first_error.empty()) throw IoError(first_error);
  return images;
}

Dataset load_dataset(std::span<const SliceRecord> records, const IapSchema& schema, std::size_t input_size) {
  Dataset data;
  data.labels.reserve(records.size());
  for (const auto& r : records) data.labels.push_back(encode_labels(r.iap_values, schema));
  data.images = load_images(records, input_size);
  return data;
}

PredictorModel::PredictorModel(IapSchema schema, BackboneConfig backbone, std::uint64_t seed)
    : schema_(std::move(schema)), network_(backbone, schema_.output_width(), seed) {}

std::vector<PredictionVector> PredictorModel::forward(std::span<const Image> images) const {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return forward(std::span<const Image* const>(ptrs));
}

std::vector<PredictionVector> PredictorModel::forward(std::span<const Image* const> images) const {
  if (images.empty()) throw ShapeError("forward on an empty batch");
  constexpr std::size_t kChunk = 64;
  const std::size_t size = input_size();
  std::vector<PredictionVector> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    for (const Image* img : chunk) {
      if (img->width != size || img->height != size) {
        throw ShapeError("model expects " + std::to_string(size) + "x" + std::to_string(size) + " images, got " +
                         std::to_string(img->width) + "x" + std::to_string(img->height));
      }
    }
    Tensor input = make_input_batch(chunk, network_.config().in_channels);
    Matrix y = network_.forward(input);
    for (std::size_t r = 0; r < y.rows; ++r) {
      out.emplace_back(schema_, std::vector<double>(y.row(r), y.row(r) + y.cols));
    }
  }
  return out;
}

std::string TrainingCurve::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,best_val_loss,improved";
  for (const auto& h : head_names) out << ",train_" << h;
  for (const auto& h : head_names) out << ",val_" << h;
  out << '\n';
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.best_val_loss) << ',' << (e.improved ? 1 : 0);
    for (double v : e.train_terms) out << ',' << format_double(v);
    for (double v : e.val_terms) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

void TrainingCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training curve " + path.string());
  out << to_csv();
}

namespace {

class Adam {
 public:
  Adam(std::vector<Parameter>& params, double lr, double weight_decay)
      : params_(params), lr_(lr), wd_(weight_decay) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value.size(), 0.0f);
      v_.emplace_back(p.value.size(), 0.0f);
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    const auto step_size = static_cast<float>(lr_ / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const float g = p.grad[j] + static_cast<float>(wd_) * p.value[j];
        m[j] = kBeta1 * m[j] + (1.0f - kBeta1) * g;
        v[j] = kBeta2 * v[j] + (1.0f - kBeta2) * g * g;
        p.value[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + kEps);
      }
    }
  }

 private:
  static constexpr float kBeta1 = 0.9f;
  static constexpr float kBeta2 = 0.999f;
  static constexpr float kEps = 1e-8f;
  std::vector<Parameter>& params_;
  double lr_, wd_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

void check_finite(const LossBreakdown& loss, std::size_t epoch) {
  for (const auto& t : loss.terms) {
    if (!std::isfinite(t.value)) throw NonFiniteLossError(t.name, static_cast<int>(epoch));
  }
  if (!std::isfinite(loss.total)) throw NonFiniteLossError("total", static_cast<int>(epoch));
}

}  // namespace

LossBreakdown evaluate_loss(const PredictorModel& model, const Dataset& data, double lambda, double eta,
                            std::size_t batch_size) {
  if (data.size() == 0) throw Error("loss evaluation on an empty dataset");
  const auto& schema = model.schema();
  LossBreakdown sum;
  for (const auto& h : schema.heads()) sum.terms.push_back({schema.descriptor(h).name, h.kind, 0.0});
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    auto preds = model.forward(std::span<const Image>(data.images).subspan(start, count));
    auto loss = compute_loss(preds, std::span<const LabelVector>(data.labels).subspan(start, count), schema, lambda, eta);
    const double w = static_cast<double>(count) / static_cast<double>(data.size());
    sum.total += w * loss.total;
    for (std::size_t i = 0; i < loss.terms.size(); ++i) sum.terms[i].value += w * loss.terms[i].value;
  }
  return sum;
}

Checkpoint train(const TrainConfig& config, const IapSchema& schema, const Dataset& train_set,
                 const Dataset& val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw Error("training needs non-empty train and val sets");

  PredictorModel model(schema, backbone_for(config.backbone_scale), derive_seed(config.seed, {1}));
  const std::size_t input = model.input_size();
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& img : set->images) {
      if (img.width != input || img.height != input) {
        throw ShapeError("dataset images must be preprocessed to " + std::to_string(input) + "x" + std::to_string(input));
      }
    }
  }

  // Regression heads start at the mean training target (native units).
  auto& bias = model.network().head_bias().value;
  for (const auto& head : schema.heads()) {
    if (head.kind != HeadKind::kRegression) continue;
    double mean = 0.0;
    for (const auto& l : train_set.labels) mean += l.continuous_targets[head.slot];
    bias[head.offset] = static_cast<float>(mean / static_cast<double>(train_set.size()));
  }

  Checkpoint best;
  best.config = config;
  best.schema_fingerprint = schema.fingerprint();
  best.best_val_loss = INFINITY;
  for (const auto& h : schema.heads()) best.curve.head_names.push_back(schema.descriptor(h).name);
  TrainingCurve curve = best.curve;

  Adam optimizer(model.network().parameters(), config.learning_rate, config.weight_decay);
  Rng rng(derive_seed(config.seed, {2}));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t width = schema.output_width();
  const std::size_t channels = model.backbone().in_channels;
  const std::size_t steps_per_epoch = (order.size() + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * config.epochs);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    record.train_terms.assign(schema.heads().size(), 0.0);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      std::vector<const Image*> batch_images(count);
      std::vector<LabelVector> batch_labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        batch_images[i] = &train_set.images[order[start + i]];
        batch_labels[i] = train_set.labels[order[start + i]];
      }
      Tensor x = make_input_batch(batch_images, channels);
      ForwardCache cache;
      Matrix y = model.network().forward(x, &cache);
      std::vector<double> raw(y.data.begin(), y.data.end());
      std::vector<double> grad;
      auto loss = compute_loss(raw, count, batch_labels, schema, config.lambda, config.eta, &grad);
      check_finite(loss, epoch);

      Matrix grad_out(count, width);
      for (std::size_t i = 0; i < grad.size(); ++i) grad_out.data[i] = static_cast<float>(grad[i]);
      model.network().backward(cache, grad_out);
      if (config.cosine_schedule) {
        optimizer.set_learning_rate(0.5 * config.learning_rate *
                                    (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps)));
      }
      optimizer.step();
      ++step;

      const double w = static_cast<double>(count) / static_cast<double>(order.size());
      record.train_loss += w * loss.total;
      for (std::size_t h = 0; h < loss.terms.size(); ++h) record.train_terms[h] += w * loss.terms[h].value;
    }

    auto val = evaluate_loss(model, val_set, config.lambda, config.eta);
    check_finite(val, epoch);
    record.val_loss = val.total;
    for (const auto& t : val.terms) record.val_terms.push_back(t.value);
    if (val.total < best.best_val_loss) {
      record.improved = true;
      best.best_val_loss = val.total;
      best.epoch = epoch;
      best.model = model;
    }
    record.best_val_loss = best.best_val_loss;
    curve.epochs.push_back(record);

    if (options.curve_path) curve.write_csv(*options.curve_path);
    if (record.improved && options.checkpoint_path) {
      best.curve = curve;
      save_checkpoint(best, *options.checkpoint_path);
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  best.curve = std::move(curve);
  if (options.checkpoint_path) save_checkpoint(best, *options.checkpoint_path);
  return best;
}

}  // namespace iapnet
