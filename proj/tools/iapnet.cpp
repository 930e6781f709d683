// iapnet: cohort generation, training, evaluation, analysis and routing.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "iapnet/cohort_analysis.hpp"
#include "iapnet/error.hpp"
#include "iapnet/evaluation.hpp"
#include "iapnet/ingestion.hpp"
#include "iapnet/model.hpp"
#include "iapnet/phantom.hpp"
#include "iapnet/router.hpp"
#include "iapnet/schema.hpp"
#include "iapnet/svg_plot.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace iapnet;

namespace {

constexpr std::uint64_t kDefaultSeed = 20240601;
constexpr const char* kDefaultFractions = "0.7,0.15,0.15";

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char out[20];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// Tracks produced files; everything lands under one output directory.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_)) throw IoError("cannot create output directory " + root_.string());
    started_ = now_iso();
  }

  const fs::path& root() const { return root_; }

  fs::path write(const std::string& name, const std::string& content) {
    const auto p = root_ / name;
    plot::write_file(p, content);
    add(p);
    return p;
  }

  void add(const fs::path& p) { files_.push_back(fs::relative(p, root_).generic_string()); }

  void finish(const std::string& command, const ordered_json& args) {
    ordered_json list = ordered_json::array();
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    for (const auto& f : files_) {
      list.push_back({{"path", f}, {"bytes", fs::file_size(root_ / f)}, {"fnv1a64", file_digest(root_ / f)}});
    }
    plot::write_file(root_ / "outputs.json", ordered_json{{"command", command}, {"files", list}}.dump(2) + "\n");
    ordered_json meta;
    meta["command"] = command;
    meta["arguments"] = args;
    meta["started"] = started_;
    meta["finished"] = now_iso();
    plot::write_file(root_ / "metadata.json", meta.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::string started_;
  std::vector<std::string> files_;
};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string device_from_env() {
  const char* d = std::getenv("IAPNET_DEVICE");
  return d && *d ? d : "cpu";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

IapSchema schema_preset(const std::string& name) {
  if (name == "reduced") return reduced_schema();
  if (name == "table1") return table1_schema();
  throw Error("unknown schema preset '" + name + "' (expected reduced|table1)");
}

IapSchema resolve_schema(const std::string& schema_arg, const fs::path& manifest) {
  if (!schema_arg.empty()) {
    if (schema_arg == "reduced" || schema_arg == "table1") return schema_preset(schema_arg);
    return load_schema(schema_arg);
  }
  const auto beside = manifest.parent_path() / "schema.json";
  if (fs::exists(beside)) return load_schema(beside);
  throw Error("no --schema given and no schema.json next to " + manifest.string());
}

struct Prepared {
  std::vector<SliceRecord> records;
  std::vector<std::string> excluded;
  SplitAssignment split;
};

Prepared prepare(const fs::path& manifest, const IapSchema& schema, const SplitFractions& fractions,
                 std::uint64_t seed) {
  Prepared p;
  auto all = load_manifest(manifest);
  auto ex = exclude_incomplete(all, schema);
  p.records = std::move(ex.kept);
  p.excluded = std::move(ex.excluded_patients);
  p.split = split_by_patient(p.records, fractions, seed);
  return p;
}

ordered_json split_json(const SplitAssignment& split) {
  ordered_json j;
  j["seed"] = split.seed;
  j["fractions"] = split.fractions;
  const char* names[] = {"train", "val", "test"};
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<std::string> ids;
    for (const auto& r : split.subset(i)) {
      if (ids.empty() || ids.back() != r.patient_id) ids.push_back(r.patient_id);
    }
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    j[names[i]] = {{"slices", split.subset(i).size()}, {"patients", ids}};
  }
  return j;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string out;
  std::uint64_t seed = kDefaultSeed;
  std::size_t patients = 20;
  std::size_t slices = 10;
  double missing = 0.0;
  std::string schema = "reduced";
  std::size_t image_size = 128;
  bool no_downstream = false;
};

int cmd_generate(const GenerateArgs& a) {
  const IapSchema schema = resolve_schema(a.schema, {});
  PhantomSpec spec = default_phantom_spec(schema);
  spec.image_size = a.image_size;
  CohortOptions opt;
  opt.n_patients = a.patients;
  opt.slices_per_patient = a.slices;
  opt.missing_fraction = a.missing;
  opt.downstream_labels = !a.no_downstream;
  OutputDir out(a.out);
  const auto summary = generate_cohort(opt, uniform_sampler(schema), spec, a.seed, out.root());
  for (const auto& r : summary.records) out.add(out.root() / r.image_path);
  for (const char* f : {"manifest.csv", "schema.json", "provenance.json"}) out.add(out.root() / f);
  std::cout << "wrote " << summary.rows << " slices for " << summary.patients << " patients ("
            << summary.blanked_patients.size() << " with a blanked IAP) to " << summary.manifest.string() << "\n";
  out.finish("generate", {{"seed", a.seed},
                          {"patients", a.patients},
                          {"slices", a.slices},
                          {"missing_fraction", a.missing},
                          {"schema", a.schema},
                          {"image_size", a.image_size}});
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest, schema, out, preset = "paper", fractions = kDefaultFractions, regress;
  std::uint64_t seed = kDefaultSeed;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, wd, lambda, eta;
};

int cmd_train(const TrainArgs& a) {
  IapSchema schema = resolve_schema(a.schema, a.manifest);
  const auto regress = split_list(a.regress);
  if (!regress.empty()) schema = apply_regression_variant(schema, regress);

  TrainConfig cfg = preset(a.preset);
  cfg.seed = a.seed;
  cfg.device = device_from_env();
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.wd) cfg.weight_decay = *a.wd;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.eta) cfg.eta = *a.eta;
  cfg.validate();
  std::cout << "preset=" << a.preset << " batch_size=" << cfg.batch_size << " epochs=" << cfg.epochs
            << " lr=" << short_number(cfg.learning_rate) << " wd=" << short_number(cfg.weight_decay)
            << " lambda=" << short_number(cfg.lambda) << " eta=" << short_number(cfg.eta)
            << " backbone=" << to_string(cfg.backbone_scale) << " device=" << cfg.device << "\n";

  const auto fractions = parse_fractions(a.fractions);
  auto prep = prepare(a.manifest, schema, fractions, a.seed);
  std::cout << prep.records.size() << " slices kept, " << prep.excluded.size() << " patients excluded; split "
            << prep.split.train.size() << "/" << prep.split.val.size() << "/" << prep.split.test.size() << "\n";

  const std::size_t input = backbone_for(cfg.backbone_scale).input_size;
  const Dataset train_set = load_dataset(prep.split.train, schema, input);
  const Dataset val_set = load_dataset(prep.split.val, schema, input);

  OutputDir out(a.out);
  TrainOptions opt;
  opt.checkpoint_path = out.root() / "model.ckpt";
  opt.curve_path = out.root() / "curve.csv";
  opt.on_epoch = [](const EpochRecord& e) {
    std::printf("epoch %3zu  train %.5f  val %.5f%s\n", e.epoch, e.train_loss, e.val_loss, e.improved ? "  *" : "");
    std::fflush(stdout);
  };

  ordered_json meta;
  meta["manifest"] = fs::absolute(a.manifest).string();
  meta["split_seed"] = a.seed;
  meta["fractions"] = fractions;
  meta["regress_iaps"] = regress;
  meta["excluded_patients"] = prep.excluded;
  Checkpoint ck = train(cfg, schema, train_set, val_set, opt);
  ck.metadata_json = meta.dump();
  save_checkpoint(ck, *opt.checkpoint_path);

  out.add(*opt.checkpoint_path);
  out.add(*opt.curve_path);
  out.write("curve.svg", plot::training_curve(ck.curve));
  out.write("split.json", split_json(prep.split).dump(2) + "\n");
  out.write("schema.json", dump_schema(schema));
  std::cout << "best epoch " << ck.epoch << " val loss " << format_double(ck.best_val_loss) << " -> "
            << opt.checkpoint_path->string() << "\n";
  out.finish("train", {{"manifest", a.manifest},
                       {"preset", a.preset},
                       {"seed", a.seed},
                       {"fractions", a.fractions},
                       {"regress_iaps", a.regress},
                       {"config", ordered_json::parse(train_config_json(cfg))}});
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string manifest, checkpoint, schema, out, subset = "test";
};

int cmd_evaluate(const EvaluateArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const IapSchema& schema = ck.model.schema();
  if (!a.schema.empty()) require_compatible(ck, resolve_schema(a.schema, a.manifest));
  const auto meta = ordered_json::parse(ck.metadata_json);
  const auto seed = meta.value("split_seed", kDefaultSeed);
  SplitFractions fractions = parse_fractions(kDefaultFractions);
  if (meta.contains("fractions")) fractions = meta["fractions"].get<SplitFractions>();
  auto prep = prepare(a.manifest, schema, fractions, seed);
  std::span<const SliceRecord> records;
  if (a.subset == "all") {
    records = prep.records;
  } else {
    const std::size_t i = a.subset == "train" ? 0 : a.subset == "val" ? 1 : a.subset == "test" ? 2 : 3;
    if (i == 3) throw Error("unknown subset '" + a.subset + "' (expected train|val|test|all)");
    records = prep.split.subset(i);
  }
  const EvalReport report = build_report(ck, records, schema);
  OutputDir out(a.out);
  out.write("report.json", report.to_json() + "\n");
  out.write("report.txt", report.to_text());
  std::cout << report.to_text();
  out.finish("evaluate", {{"manifest", a.manifest}, {"checkpoint", a.checkpoint}, {"subset", a.subset}});
  return 0;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string manifest, schema, out, fractions = kDefaultFractions, mode = "all";
  std::uint64_t seed = kDefaultSeed;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const IapSchema schema = resolve_schema(a.schema, a.manifest);
  CombinationMode mode;
  if (a.mode == "all") {
    mode = CombinationMode::kAllIaps;
  } else if (a.mode == "categorical") {
    mode = CombinationMode::kCategoricalOnly;
  } else {
    throw Error("unknown combination mode '" + a.mode + "' (expected all|categorical)");
  }
  auto prep = prepare(a.manifest, schema, parse_fractions(a.fractions), a.seed);
  const char* names[] = {"train", "val", "test"};
  OutputDir out(a.out);

  ordered_json hist_json = ordered_json::object();
  for (const auto& d : schema.descriptors()) {
    std::vector<IapHistogram> panels;
    for (std::size_t i = 0; i < 3; ++i) panels.push_back(value_histogram(prep.split.subset(i), d.name, schema, names[i]));
    auto& entry = hist_json[d.name];
    for (const auto& h : panels) {
      ordered_json bins = ordered_json::array();
      for (const auto& [value, count] : h.bins) bins.push_back({value, count});
      entry[h.subset] = bins;
    }
    out.write("histogram_" + d.name + ".svg", plot::histogram_panels(panels, d.name));
  }
  out.write("histograms.json", hist_json.dump(2) + "\n");

  for (std::size_t i = 0; i < 3; ++i) {
    if (prep.split.subset(i).size() < 2) {
      std::cout << "skipping correlations for " << names[i] << " (fewer than 2 slices)\n";
      continue;
    }
    const auto m = spearman_matrix(prep.split.subset(i), schema);
    out.write(std::string("spearman_") + names[i] + ".json", m.to_json() + "\n");
    out.write(std::string("spearman_") + names[i] + ".svg",
              plot::correlation_heatmap(m, std::string("Spearman correlation, ") + names[i]));
  }

  std::vector<OverlapCounts> rows;
  for (auto [x, y] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
    rows.push_back(combination_overlap(prep.split.subset(x), prep.split.subset(y), schema, mode, names[x], names[y]));
  }
  ordered_json overlap = ordered_json::array();
  for (const auto& r : rows) {
    overlap.push_back({{"a", r.a_name}, {"b", r.b_name}, {"only_a", r.only_a}, {"only_b", r.only_b}, {"both", r.both}});
  }
  out.write("overlap.json", ordered_json{{"mode", a.mode}, {"rows", overlap}}.dump(2) + "\n");
  const auto table = overlap_table(rows);
  out.write("overlap.txt", table);
  std::cout << table;
  out.finish("analyze", {{"manifest", a.manifest}, {"seed", a.seed}, {"fractions", a.fractions}, {"mode", a.mode}});
  return 0;
}

// ------------------------------------------------------------------- route

struct RouteArgs {
  std::string manifest, iap_checkpoint, route_table, out, fractions = kDefaultFractions, preset = "tiny",
                                                          domain_key = "manufacturer";
  std::uint64_t seed = kDefaultSeed;
  std::optional<std::size_t> epochs;
};

int cmd_route(const RouteArgs& a) {
  const Checkpoint iap = load_checkpoint(a.iap_checkpoint);
  const IapSchema& schema = iap.model.schema();
  const RouteTable table = a.route_table.empty()
                               ? exact_match_table(schema.descriptors()[schema.index_of(a.domain_key)])
                               : RouteTable::load(a.route_table);
  auto prep = prepare(a.manifest, schema, parse_fractions(a.fractions), a.seed);

  TrainConfig cfg = preset(a.preset);
  cfg.seed = a.seed;
  cfg.device = device_from_env();
  if (a.epochs) cfg.epochs = *a.epochs;
  OutputDir out(a.out);
  const auto models = train_domain_models(prep.split.train, a.domain_key, schema, cfg);
  for (const auto& m : models) {
    const auto p = out.root() / ("domain_" + m.id + ".ckpt");
    save_checkpoint(m.checkpoint, p);
    out.add(p);
  }
  const auto result =
      run_routing_experiment(prep.split.test, checkpoint_predictor(iap.model), models, table, a.domain_key);
  out.write("route_table.json", table.to_json() + "\n");
  out.write("routing.json", result.to_json() + "\n");
  out.write("routing.txt", result.to_text());
  std::cout << result.to_text();
  out.finish("route", {{"manifest", a.manifest},
                       {"iap_checkpoint", a.iap_checkpoint},
                       {"route_table", a.route_table},
                       {"seed", a.seed},
                       {"fractions", a.fractions},
                       {"preset", a.preset},
                       {"domain_key", a.domain_key}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predict image acquisition parameters from MR slices and route images to domain models"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render a synthetic phantom cohort");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  g->add_option("--patients", gen.patients)->capture_default_str();
  g->add_option("--slices", gen.slices, "Slices per patient")->capture_default_str();
  g->add_option("--missing-fraction", gen.missing, "Share of patients with one blanked IAP")->capture_default_str();
  g->add_option("--schema", gen.schema, "reduced, table1 or a schema file")->capture_default_str();
  g->add_option("--image-size", gen.image_size)->capture_default_str();
  g->add_flag("--no-downstream", gen.no_downstream, "Omit downstream labels");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the multi-head IAP predictor");
  t->add_option("--manifest", tr.manifest)->required();
  t->add_option("--schema", tr.schema, "Schema file or preset (default: schema.json beside the manifest)");
  t->add_option("--out", tr.out)->required();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--preset", tr.preset, "tiny|paper")->capture_default_str();
  t->add_option("--fractions", tr.fractions, "train,val,test")->capture_default_str();
  t->add_option("--regress-iaps", tr.regress, "Comma-separated categorical IAPs to train as continuous");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--lr", tr.lr);
  t->add_option("--weight-decay", tr.wd);
  t->add_option("--lambda", tr.lambda);
  t->add_option("--eta", tr.eta);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Per-IAP accuracy and MSE report");
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--schema", ev.schema);
  e->add_option("--out", ev.out)->required();
  e->add_option("--subset", ev.subset, "train|val|test|all")->capture_default_str();

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "Histograms, rank correlations and combination overlap");
  z->add_option("--manifest", an.manifest)->required();
  z->add_option("--schema", an.schema);
  z->add_option("--out", an.out)->required();
  z->add_option("--seed", an.seed)->capture_default_str();
  z->add_option("--fractions", an.fractions)->capture_default_str();
  z->add_option("--combination-mode", an.mode, "all|categorical")->capture_default_str();

  RouteArgs ro;
  auto* r = app.add_subcommand("route", "Train domain models and compare fixed, routed and oracle selection");
  r->add_option("--manifest", ro.manifest)->required();
  r->add_option("--iap-checkpoint", ro.iap_checkpoint)->required();
  r->add_option("--route-table", ro.route_table, "JSON route table (default: exact match on the domain key)");
  r->add_option("--out", ro.out)->required();
  r->add_option("--seed", ro.seed)->capture_default_str();
  r->add_option("--fractions", ro.fractions)->capture_default_str();
  r->add_option("--preset", ro.preset, "Recipe for the domain models")->capture_default_str();
  r->add_option("--domain-key", ro.domain_key)->capture_default_str();
  r->add_option("--epochs", ro.epochs);

  std::string schema_preset_name = "reduced", schema_out;
  auto* s = app.add_subcommand("schema", "Write a built-in schema");
  s->add_option("--preset", schema_preset_name, "reduced|table1")->capture_default_str();
  s->add_option("--out", schema_out, "Destination file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_evaluate(ev);
    if (*z) return cmd_analyze(an);
    if (*r) return cmd_route(ro);
    if (*s) {
      const auto schema = schema_preset(schema_preset_name);
      if (schema_out.empty()) {
        std::cout << dump_schema(schema);
      } else {
        save_schema(schema, schema_out);
      }
      return 0;
    }
  } catch (const ComputationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 2;
}
