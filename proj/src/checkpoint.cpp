#include <cstring>
#include <fstream>
#include <sstream>

#include "iapnet/error.hpp"
#include "iapnet/model.hpp"
#include "json.hpp"

namespace iapnet {

namespace {

constexpr char kMagic[8] = {'I', 'A', 'P', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

using nlohmann::ordered_json;

ordered_json config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["lambda"] = c.lambda;
  j["eta"] = c.eta;
  j["seed"] = c.seed;
  j["device"] = c.device;
  j["backbone_scale"] = to_string(c.backbone_scale);
  j["pretrained"] = c.pretrained;
  j["cosine_schedule"] = c.cosine_schedule;
  return j;
}

TrainConfig config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.eta = j.at("eta").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.device = j.at("device").get<std::string>();
  c.backbone_scale = parse_backbone_scale(j.at("backbone_scale").get<std::string>());
  c.pretrained = j.at("pretrained").get<bool>();
  c.cosine_schedule = j.value("cosine_schedule", false);
  return c;
}

ordered_json backbone_to_json(const BackboneConfig& b) {
  ordered_json j;
  j["input_size"] = b.input_size;
  j["in_channels"] = b.in_channels;
  j["stem_channels"] = b.stem_channels;
  j["stem_kernel"] = b.stem_kernel;
  j["stem_stride"] = b.stem_stride;
  j["stage_channels"] = b.stage_channels;
  j["stage_strides"] = b.stage_strides;
  j["blocks_per_stage"] = b.blocks_per_stage;
  j["pooled_size"] = b.pooled_size;
  return j;
}

BackboneConfig backbone_from_json(const ordered_json& j) {
  BackboneConfig b;
  b.input_size = j.at("input_size").get<std::size_t>();
  b.in_channels = j.at("in_channels").get<std::size_t>();
  b.stem_channels = j.at("stem_channels").get<std::size_t>();
  b.stem_kernel = j.at("stem_kernel").get<std::size_t>();
  b.stem_stride = j.at("stem_stride").get<std::size_t>();
  b.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  b.stage_strides = j.at("stage_strides").get<std::vector<std::size_t>>();
  b.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  b.pooled_size = j.at("pooled_size").get<std::size_t>();
  return b;
}

TrainingCurve curve_from_json(const ordered_json& j) {
  TrainingCurve curve;
  curve.head_names = j.at("heads").get<std::vector<std::string>>();
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<std::size_t>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_loss = e.at("val_loss").get<double>();
    r.best_val_loss = e.at("best_val_loss").get<double>();
    r.improved = e.at("improved").get<bool>();
    r.train_terms = e.at("train_terms").get<std::vector<double>>();
    r.val_terms = e.at("val_terms").get<std::vector<double>>();
    curve.epochs.push_back(std::move(r));
  }
  return curve;
}

ordered_json curve_to_json(const TrainingCurve& curve) {
  ordered_json j;
  j["heads"] = curve.head_names;
  j["epochs"] = ordered_json::array();
  for (const auto& e : curve.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"best_val_loss", e.best_val_loss},
                           {"improved", e.improved},
                           {"train_terms", e.train_terms},
                           {"val_terms", e.val_terms}});
  }
  return j;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::string train_config_json(const TrainConfig& config) { return config_to_json(config).dump(); }

// Layout: magic, u64 version, u64 header length, JSON header, then every
// parameter tensor as little-endian float32 in header order.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto& model = checkpoint.model;
  ordered_json header;
  header["format"] = "iapnet-checkpoint";
  header["schema_fingerprint"] = checkpoint.schema_fingerprint;
  header["schema"] = dump_schema(model.schema());
  header["best_val_loss"] = checkpoint.best_val_loss;
  header["epoch"] = checkpoint.epoch;
  header["config"] = config_to_json(checkpoint.config);
  header["backbone"] = backbone_to_json(model.backbone());
  header["curve"] = curve_to_json(checkpoint.curve);
  header["metadata"] = ordered_json::parse(checkpoint.metadata_json.empty() ? "{}" : checkpoint.metadata_json);
  auto& params = header["parameters"] = ordered_json::array();
  for (const auto& p : model.network().parameters()) params.push_back({{"name", p.name}, {"size", p.value.size()}});
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, kFormatVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.network().parameters()) {
      for (float v : p.value) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
      }
    }
    if (!out) throw IoError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError(path.string() + " is not an iapnet checkpoint");
  }
  if (read_u64(in) != kFormatVersion) throw CheckpointError("unsupported checkpoint version in " + path.string());
  const auto len = read_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint header");

  Checkpoint ck;
  try {
    auto header = ordered_json::parse(text);
    IapSchema schema = parse_schema(header.at("schema").get<std::string>());
    ck.schema_fingerprint = header.at("schema_fingerprint").get<std::string>();
    if (schema.fingerprint() != ck.schema_fingerprint) {
      throw CheckpointError("checkpoint schema does not match its stored fingerprint");
    }
    ck.best_val_loss = header.at("best_val_loss").get<double>();
    ck.epoch = header.at("epoch").get<std::size_t>();
    ck.config = config_from_json(header.at("config"));
    ck.curve = curve_from_json(header.at("curve"));
    ck.metadata_json = header.at("metadata").dump();
    ck.model = PredictorModel(std::move(schema), backbone_from_json(header.at("backbone")), 0);

    auto& params = ck.model.network().parameters();
    const auto& listed = header.at("parameters");
    if (listed.size() != params.size()) throw CheckpointError("checkpoint parameter list does not match backbone");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (listed[i].at("name").get<std::string>() != params[i].name ||
          listed[i].at("size").get<std::size_t>() != params[i].value.size()) {
        throw CheckpointError("checkpoint parameter '" + params[i].name + "' has an unexpected shape");
      }
      for (auto& v : params[i].value) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint weights");
        std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        std::memcpy(&v, &bits, 4);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ck;
}

void require_compatible(const Checkpoint& checkpoint, const IapSchema& schema) {
  if (checkpoint.schema_fingerprint != schema.fingerprint()) {
    throw CheckpointError("schema fingerprint mismatch: checkpoint " + checkpoint.schema_fingerprint + " vs schema " +
                          schema.fingerprint());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const IapSchema& expected) {
  auto ck = load_checkpoint(path);
  require_compatible(ck, expected);
  return ck;
}

}  // namespace iapnet
