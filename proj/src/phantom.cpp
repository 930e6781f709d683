#include "iapnet/phantom.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "iapnet/error.hpp"
#include "json.hpp"

namespace iapnet {

namespace {

constexpr double kPi = std::numbers::pi;

struct ChannelInfo {
  Channel channel;
  const char* name;
  ChannelLadder ladder;
};

// Spacing floors are the smallest step at which the rendered difference
// still clears the identifiability floor.
constexpr ChannelInfo kChannels[] = {
    {Channel::kNoiseSigma, "noise_sigma", {0.01, 0.09, 0.003}},
    {Channel::kBlurSigma, "blur_sigma", {0.5, 2.5, 0.075}},
    {Channel::kGamma, "gamma", {0.6, 1.6, 0.03}},
    {Channel::kGridPeriod, "grid_period", {4.0, 30.0, 1.0}},
    {Channel::kBorderWidth, "border_width", {2.0, 8.0, 0.2}},
    {Channel::kPlateauLevel, "plateau_level", {0.15, 0.85, 0.02}},
    {Channel::kVerticalFlip, "vertical_flip", {0.0, 1.0, 1.0}},
    {Channel::kTextureFrequency, "texture_frequency", {3.0, 9.0, 0.4}},
    {Channel::kMarkerCount, "marker_count", {1.0, 27.0, 1.0}},
    {Channel::kRingRadius, "ring_radius", {10.0, 50.0, 1.5}},
    {Channel::kEchoTime, "echo_time", {0.0, 0.0, 0.0}},
    {Channel::kRepetitionTime, "repetition_time", {0.0, 0.0, 0.0}},
};

const ChannelInfo& info(Channel c) {
  for (const auto& i : kChannels) {
    if (i.channel == c) return i;
  }
  throw Error("unknown channel");
}

// Tissue relaxation properties (arbitrary time units matching TE/TR in ms).
struct Tissue {
  double pd, t1, t2;
};
constexpr Tissue kFat{1.0, 3.0, 3.0};
constexpr Tissue kGland{0.65, 6.0, 1.6};
constexpr Tissue kLesion{1.0, 2.5, 5.0};
constexpr Tissue kMuscle{0.9, 1.5, 6.0};

double signal(const Tissue& t, double te, double tr) {
  return t.pd * (1.0 - std::exp(-tr / t.t1)) * std::exp(-te / t.t2);
}

constexpr double kBackground = 0.15;
// Pads far outside [0,1] survive noise and pin the per-image min and max.
constexpr double kDarkPad = -1.0;
constexpr double kBrightPad = 1.5;

// Calibration vials ramp linearly across the declared range of their IAP.
double vial_level(double v, const std::pair<double, double>& range, bool decreasing) {
  const double f = (v - range.first) / (range.second - range.first);
  return decreasing ? 0.9 - 0.8 * f : 0.1 + 0.8 * f;
}

std::size_t category_of(const IapDescriptor& d, const ValueMap& values) {
  auto it = values.find(d.name);
  if (it == values.end() || it->second.empty()) throw EncodeError("missing value for IAP '" + d.name + "'");
  auto c = std::find(d.categories.begin(), d.categories.end(), it->second);
  if (c == d.categories.end()) throw EncodeError("unknown category '" + it->second + "' for IAP '" + d.name + "'");
  return static_cast<std::size_t>(c - d.categories.begin());
}

double continuous_of(const IapDescriptor& d, const ValueMap& values) {
  auto it = values.find(d.name);
  if (it == values.end() || it->second.empty()) throw EncodeError("missing value for IAP '" + d.name + "'");
  double v = 0.0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw EncodeError("invalid value '" + s + "' for IAP '" + d.name + "'");
  }
  return v;
}

void gaussian_blur(std::vector<double>& img, std::size_t n, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  const int N = static_cast<int>(n);
  auto clampi = [N](int i) { return std::clamp(i, 0, N - 1); };
  std::vector<double> tmp(img.size());
  for (int y = 0; y < N; ++y) {
    for (int x = 0; x < N; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * img[static_cast<std::size_t>(y * N + clampi(x + i))];
      tmp[static_cast<std::size_t>(y * N + x)] = acc;
    }
  }
  for (int y = 0; y < N; ++y) {
    for (int x = 0; x < N; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(clampi(y + i) * N + x)];
      img[static_cast<std::size_t>(y * N + x)] = acc;
    }
  }
}

struct Blob {
  double cx, cy, a, b, cos_t, sin_t;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * cos_t + dy * sin_t;
    const double v = -dx * sin_t + dy * cos_t;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

struct Wave {
  double cos_t, sin_t, phase;
};

struct Anatomy {
  Blob body;
  std::vector<Blob> glands;
  Blob lesion;
  double wall_top = 32.0;
  int lesion_side = 0;
  Wave waves[3];
};

// All geometry is laid out on a 128-pixel reference grid and scaled.
Anatomy sample_anatomy(std::uint64_t seed, int slice_index) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(slice_index), 1}));
  Anatomy a;
  a.body = {64.0 + uniform(rng, -3, 3), 70.0 + uniform(rng, -2, 2), uniform(rng, 24, 28), uniform(rng, 22, 26), 1.0, 0.0};
  a.wall_top = uniform(rng, 30, 34);
  const auto n_glands = 3 + uniform_index(rng, 3);
  for (std::uint64_t i = 0; i < n_glands; ++i) {
    const double r = 0.5 * std::sqrt(uniform01(rng));
    const double phi = uniform(rng, 0, 2 * kPi);
    const double t = uniform(rng, 0, kPi);
    a.glands.push_back({a.body.cx + r * a.body.a * std::cos(phi), a.body.cy + r * a.body.b * std::sin(phi),
                        uniform(rng, 6, 12), uniform(rng, 4, 8), std::cos(t), std::sin(t)});
  }
  a.lesion_side = static_cast<int>(uniform_index(rng, 2));
  const double offset = uniform(rng, 0.35, 0.55) * a.body.a;
  const double radius = uniform(rng, 5, 7);
  a.lesion = {a.body.cx + (a.lesion_side == 0 ? -offset : offset), a.body.cy + uniform(rng, -0.3, 0.3) * a.body.b,
              radius, radius, 1.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    const double t = kPi * (0.1 + i / 3.0);
    a.waves[i] = {std::cos(t), std::sin(t), uniform(rng, 0, 2 * kPi)};
  }
  return a;
}

}  // namespace

std::string to_string(Channel channel) { return info(channel).name; }

Channel parse_channel(const std::string& text) {
  for (const auto& i : kChannels) {
    if (text == i.name) return i.channel;
  }
  throw Error("unknown rendering channel '" + text + "'");
}

bool is_continuous_channel(Channel channel) {
  return channel == Channel::kEchoTime || channel == Channel::kRepetitionTime;
}

ChannelLadder ladder_for(Channel channel) { return info(channel).ladder; }

void PhantomSpec::validate() const {
  if (image_size < 32) throw SchemaError("phantom image size must be at least 32");
  std::set<Channel> used;
  for (const auto& d : schema.descriptors()) {
    auto it = channels.find(d.name);
    if (it == channels.end()) throw SchemaError("IAP '" + d.name + "' has no rendering channel");
    const Channel c = it->second;
    if (!used.insert(c).second) throw SchemaError("channel " + to_string(c) + " is driven by more than one IAP");
    if (d.is_categorical()) {
      if (is_continuous_channel(c)) throw SchemaError("categorical IAP '" + d.name + "' bound to a continuous channel");
      const auto n = d.categories.size();
      if (c == Channel::kVerticalFlip && n != 2) throw SchemaError("flip channel needs exactly 2 categories");
      if (c == Channel::kMarkerCount) {
        if (n > 27) throw SchemaError("marker channel supports at most 27 categories");
        continue;
      }
      const auto l = ladder_for(c);
      const double step = (l.hi - l.lo) / static_cast<double>(n - 1);
      if (step < l.min_spacing) {
        throw SchemaError("IAP '" + d.name + "' has too many categories for channel " + to_string(c));
      }
    } else {
      if (!is_continuous_channel(c)) throw SchemaError("continuous IAP '" + d.name + "' bound to a categorical channel");
      if (!d.range) throw SchemaError("continuous IAP '" + d.name + "' needs a sampling range");
    }
  }
  for (const auto& [name, c] : channels) {
    if (!schema.find(name)) throw SchemaError("channel map names unknown IAP '" + name + "'");
  }
  if (!domain_key.empty()) {
    if (auto i = schema.find(domain_key); i && !schema.descriptors()[*i].is_categorical()) {
      throw SchemaError("domain key '" + domain_key + "' must be categorical");
    }
  }
}

PhantomSpec default_phantom_spec(const IapSchema& schema) {
  static const std::map<std::string, Channel> known = {
      {"manufacturer", Channel::kBorderWidth},      {"scanner_model", Channel::kRingRadius},
      {"scan_options", Channel::kTextureFrequency}, {"field_strength", Channel::kNoiseSigma},
      {"patient_position", Channel::kVerticalFlip}, {"contrast_agent", Channel::kPlateauLevel},
      {"acquisition_matrix", Channel::kGridPeriod}, {"slice_thickness", Channel::kBlurSigma},
      {"flip_angle", Channel::kGamma},              {"fov_computed", Channel::kMarkerCount},
      {"te", Channel::kEchoTime},                   {"tr", Channel::kRepetitionTime},
  };
  PhantomSpec spec;
  spec.schema = schema;
  std::set<Channel> used;
  for (const auto& d : schema.descriptors()) {
    auto it = known.find(d.name);
    if (it != known.end() && is_continuous_channel(it->second) != d.is_categorical()) {
      spec.channels[d.name] = it->second;
      used.insert(it->second);
    }
  }
  for (const auto& d : schema.descriptors()) {
    if (spec.channels.count(d.name)) continue;
    for (const auto& i : kChannels) {
      if (used.count(i.channel) || is_continuous_channel(i.channel) == d.is_categorical()) continue;
      if (i.channel == Channel::kVerticalFlip && d.categories.size() != 2) continue;
      spec.channels[d.name] = i.channel;
      used.insert(i.channel);
      break;
    }
    if (!spec.channels.count(d.name)) throw SchemaError("no free rendering channel for IAP '" + d.name + "'");
  }
  if (!schema.find(spec.domain_key)) spec.domain_key.clear();
  spec.validate();
  return spec;
}

RenderParams channel_parameters(const ValueMap& values, const PhantomSpec& spec) {
  RenderParams p;
  for (const auto& d : spec.schema.descriptors()) {
    const Channel c = spec.channels.at(d.name);
    if (!d.is_categorical()) {
      const double v = continuous_of(d, values);
      if (!(v > 0.0)) throw EncodeError("IAP '" + d.name + "' must be positive");
      (c == Channel::kEchoTime ? p.echo_time : p.repetition_time) = v;
      continue;
    }
    const std::size_t i = category_of(d, values);
    const auto l = ladder_for(c);
    const double v = l.lo + (l.hi - l.lo) * static_cast<double>(i) / static_cast<double>(d.categories.size() - 1);
    switch (c) {
      case Channel::kNoiseSigma: p.noise_sigma = v; break;
      case Channel::kBlurSigma: p.blur_sigma = v; break;
      case Channel::kGamma: p.gamma = v; break;
      case Channel::kGridPeriod: p.grid_period = v; break;
      case Channel::kBorderWidth: p.border_width = v; break;
      case Channel::kPlateauLevel: p.plateau_level = v; break;
      case Channel::kVerticalFlip: p.vertical_flip = i == 1; break;
      case Channel::kTextureFrequency: p.texture_frequency = v; break;
      case Channel::kMarkerCount: p.marker_count = static_cast<int>(i) + 1; break;
      case Channel::kRingRadius: p.ring_radius = v; break;
      default: break;
    }
  }
  return p;
}

Phantom render_phantom(const ValueMap& values, std::uint64_t anatomy_seed, int slice_index, const PhantomSpec& spec) {
  const RenderParams p = channel_parameters(values, spec);
  const std::size_t n = spec.image_size;
  const double u = static_cast<double>(n) / 128.0;
  const std::uint64_t seed = derive_seed(spec.base_seed, {anatomy_seed});
  const Anatomy anat = sample_anatomy(seed, slice_index);

  std::pair<double, double> te_range{1.25, 2.76}, tr_range{3.54, 7.40};
  for (const auto& d : spec.schema.descriptors()) {
    const Channel c = spec.channels.at(d.name);
    if (c == Channel::kEchoTime) te_range = *d.range;
    if (c == Channel::kRepetitionTime) tr_range = *d.range;
  }

  // Anatomy: tissue response curve, gamma, texture.
  std::vector<double> img(n * n, kBackground);
  std::vector<unsigned char> inside(n * n, 0);
  const double s_fat = signal(kFat, p.echo_time, p.repetition_time);
  const double s_gland = signal(kGland, p.echo_time, p.repetition_time);
  const double s_lesion = signal(kLesion, p.echo_time, p.repetition_time);
  const double s_muscle = signal(kMuscle, p.echo_time, p.repetition_time);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double rx = (static_cast<double>(x) + 0.5) / u, ry = (static_cast<double>(y) + 0.5) / u;
      double t = 0.0;
      for (const auto& w : anat.waves) {
        t += std::cos(2 * kPi * p.texture_frequency * (rx * w.cos_t + ry * w.sin_t) / 128.0 + w.phase);
      }
      t /= 3.0;
      double s;
      if (anat.body.contains(rx, ry)) {
        s = s_fat;
        for (const auto& g : anat.glands) {
          if (g.contains(rx, ry)) s = s_gland;
        }
        if (anat.lesion.contains(rx, ry)) s = s_lesion;
      } else if (ry >= anat.wall_top && ry < anat.wall_top + 6.0 && rx >= 36.0 && rx < 92.0) {
        s = s_muscle;
      } else {
        img[y * n + x] = kBackground + 0.1 * t;
        continue;
      }
      img[y * n + x] = std::pow(s, p.gamma) * (1.0 + 0.5 * t);
      inside[y * n + x] = 1;
    }
  }

  auto fill_rect = [&](double y0, double y1, double x0, double x1, double v) {
    const auto ys = static_cast<std::size_t>(std::lround(y0 * u)), ye = static_cast<std::size_t>(std::lround(y1 * u));
    const auto xs = static_cast<std::size_t>(std::lround(x0 * u)), xe = static_cast<std::size_t>(std::lround(x1 * u));
    for (std::size_t y = ys; y < std::min(ye, n); ++y) {
      for (std::size_t x = xs; x < std::min(xe, n); ++x) img[y * n + x] = v;
    }
  };

  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double rx = (static_cast<double>(x) + 0.5) / u, ry = (static_cast<double>(y) + 0.5) / u;
      double& v = img[y * n + x];
      if (p.ring_radius > 0.0 && std::abs(std::hypot(rx - 64.0, ry - 64.0) - p.ring_radius) < 0.75) v += 0.3;
      if (p.border_width > 0.0) {
        // Frame of value 0.5; the innermost partial pixel is blended.
        const double d = std::min(std::min(rx, ry), std::min(128.0 - rx, 128.0 - ry)) - 0.5 / u;
        const double cover = std::clamp(p.border_width - d, 0.0, 1.0);
        v = v * (1.0 - cover) + 0.5 * cover;
      }
    }
  }
  fill_rect(32, 96, 0, 32, vial_level(p.echo_time, te_range, true));
  fill_rect(32, 96, 96, 128, vial_level(p.repetition_time, tr_range, false));
  if (p.plateau_level) fill_rect(108, 116, 32, 96, *p.plateau_level);
  for (int k = 0; k < p.marker_count; ++k) fill_rect(11, 29, 9 + 4 * k, 12 + 4 * k, 1.0);
  // Step wedge: a linear ramp that only the gamma channel reshapes.
  for (int k = 0; k < 8; ++k) fill_rect(99, 107, 32 + 8 * k, 40 + 8 * k, std::pow((k + 0.5) / 8.0, p.gamma));

  gaussian_blur(img, n, p.blur_sigma * u);
  if (p.grid_period > 0.0) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double rx = (static_cast<double>(x) + 0.5) / u;
        if (inside[y * n + x]) img[y * n + x] += 0.08 * std::sin(2 * kPi * rx / p.grid_period);
      }
    }
  }
  fill_rect(2, 8, 36, 52, kDarkPad);
  fill_rect(120, 126, 36, 52, kDarkPad);
  fill_rect(2, 8, 76, 92, kBrightPad);
  fill_rect(120, 126, 76, 92, kBrightPad);

  Rng noise(derive_seed(seed, {static_cast<std::uint64_t>(slice_index), 2}));
  Phantom out;
  out.anatomy.lesion_side = anat.lesion_side;
  out.image = Image(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    const std::size_t dst = p.vertical_flip ? n - 1 - y : y;
    for (std::size_t x = 0; x < n; ++x) {
      const double v = img[y * n + x] + p.noise_sigma * normal(noise);
      out.image.at(dst, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

int downstream_label(const AnatomyInfo& anatomy, std::size_t domain_category) {
  return anatomy.lesion_side == static_cast<int>(domain_category % 2) ? 1 : 0;
}

IapSampler uniform_sampler(const IapSchema& schema) {
  return [schema](Rng& rng) {
    ValueMap values;
    for (const auto& d : schema.descriptors()) {
      if (d.is_categorical()) {
        values[d.name] = d.categories[uniform_index(rng, d.categories.size())];
      } else {
        const auto [lo, hi] = d.range.value_or(std::pair{1.0, 2.0});
        values[d.name] = format_double(std::round(uniform(rng, lo, hi) * 1000.0) / 1000.0);
      }
    }
    return values;
  };
}

CohortSummary generate_cohort(const CohortOptions& options, const IapSampler& sampler, const PhantomSpec& spec,
                              std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (options.n_patients == 0 || options.slices_per_patient == 0) {
    throw Error("cohort needs at least one patient and one slice");
  }
  if (options.missing_fraction < 0.0 || options.missing_fraction > 1.0) throw Error("missing fraction must be in [0,1]");
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const std::size_t n = options.n_patients;
  const int width = std::max(4, static_cast<int>(std::to_string(n - 1).size()));
  std::vector<std::string> ids(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::string num = std::to_string(p);
    ids[p] = "P" + std::string(static_cast<std::size_t>(width) - std::min(num.size(), static_cast<std::size_t>(width)), '0') + num;
  }

  std::optional<std::size_t> domain;
  if (options.downstream_labels && !spec.domain_key.empty()) domain = spec.schema.find(spec.domain_key);

  std::vector<std::vector<SliceRecord>> per_patient(n);
  std::string first_error;
  const auto np = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t pi = 0; pi < np; ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    try {
      Rng rng(derive_seed(seed, {p, 0}));
      const ValueMap values = sampler(rng);
      const std::uint64_t anatomy_seed = derive_seed(seed, {p, 1});
      std::size_t domain_category = 0;
      if (domain) domain_category = category_of(spec.schema.descriptors()[*domain], values);
      for (std::size_t s = 0; s < options.slices_per_patient; ++s) {
        const auto phantom = render_phantom(values, anatomy_seed, static_cast<int>(s), spec);
        char name[64];
        std::snprintf(name, sizeof name, "%s_s%03zu.png", ids[p].c_str(), s);
        write_png(phantom.image, out_dir / "images" / name, options.bit_depth);
        SliceRecord r;
        r.patient_id = ids[p];
        r.slice_index = static_cast<int>(s);
        r.image_path = std::filesystem::path("images") / name;
        r.iap_values = values;
        if (domain) r.downstream_label = downstream_label(phantom.anatomy, domain_category);
        per_patient[p].push_back(std::move(r));
      }
    } catch (const std::exception& e) {
#pragma omp critical
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!first_error.empty()) throw IoError(first_error);

  CohortSummary summary;
  summary.patients = n;
  const auto blank_count = static_cast<std::size_t>(std::floor(options.missing_fraction * static_cast<double>(n) + 1e-9));
  if (blank_count > 0) {
    Rng rng(derive_seed(seed, {~std::uint64_t{0}}));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order.begin(), order.end(), rng);
    order.resize(blank_count);
    std::sort(order.begin(), order.end());
    for (std::size_t p : order) {
      const auto& d = spec.schema.descriptors()[uniform_index(rng, spec.schema.size())];
      per_patient[p][uniform_index(rng, options.slices_per_patient)].iap_values[d.name] = "";
      summary.blanked_patients.push_back(ids[p]);
    }
  }

  for (auto& slices : per_patient) {
    for (auto& r : slices) summary.records.push_back(std::move(r));
  }
  summary.rows = summary.records.size();
  std::vector<std::string> names;
  for (const auto& d : spec.schema.descriptors()) names.push_back(d.name);
  summary.manifest = out_dir / "manifest.csv";
  write_manifest(summary.records, names, summary.manifest);
  save_schema(spec.schema, out_dir / "schema.json");

  nlohmann::ordered_json prov;
  prov["generator"] = "iapnet phantom v1";
  prov["seed"] = seed;
  prov["n_patients"] = options.n_patients;
  prov["slices_per_patient"] = options.slices_per_patient;
  prov["missing_fraction"] = options.missing_fraction;
  prov["blanked_patients"] = summary.blanked_patients;
  prov["image_size"] = spec.image_size;
  prov["base_seed"] = spec.base_seed;
  prov["identifiability_floor"] = spec.identifiability_floor;
  prov["domain_key"] = spec.domain_key;
  prov["schema_fingerprint"] = spec.schema.fingerprint();
  auto& ch = prov["channels"] = nlohmann::ordered_json::object();
  for (const auto& d : spec.schema.descriptors()) ch[d.name] = to_string(spec.channels.at(d.name));
  std::ofstream out(out_dir / "provenance.json");
  if (!out) throw IoError("cannot write provenance.json in " + out_dir.string());
  out << prov.dump(2) << '\n';
  return summary;
}

}  // namespace iapnet
