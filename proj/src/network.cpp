#include "iapnet/network.hpp"

#include <cmath>

#include "iapnet/error.hpp"
#include "iapnet/random.hpp"

namespace iapnet {

std::string to_string(BackboneScale scale) { return scale == BackboneScale::kFull ? "full" : "tiny"; }

BackboneScale parse_backbone_scale(const std::string& text) {
  if (text == "full" || text == "paper") return BackboneScale::kFull;
  if (text == "tiny") return BackboneScale::kTiny;
  throw Error("unknown backbone scale '" + text + "' (expected full|tiny)");
}

std::size_t BackboneConfig::feature_extent() const {
  std::size_t extent = (input_size + 2 * (stem_kernel / 2) - stem_kernel) / stem_stride + 1;
  for (std::size_t s : stage_strides) extent = (extent + 2 - 3) / s + 1;
  return extent;
}

std::size_t BackboneConfig::feature_count() const {
  return stage_channels.back() * pooled_size * pooled_size;
}

BackboneConfig full_backbone() { return BackboneConfig{}; }

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.input_size = 64;
  c.stem_channels = 16;
  c.stem_kernel = 3;
  c.stem_stride = 2;
  c.stage_channels = {16, 32, 64};
  c.stage_strides = {1, 2, 2};
  c.blocks_per_stage = 1;
  c.pooled_size = 4;
  return c;
}

BackboneConfig backbone_for(BackboneScale scale) {
  return scale == BackboneScale::kFull ? full_backbone() : tiny_backbone();
}

std::size_t Network::add_param(std::string name, std::size_t count) {
  params_.push_back(Parameter{std::move(name), std::vector<float>(count, 0.0f), std::vector<float>(count, 0.0f)});
  return params_.size() - 1;
}

ConvLayer Network::make_conv(const std::string& name, const ConvGeometry& g) {
  ConvLayer layer;
  layer.geometry = g;
  layer.weight = add_param(name + ".weight", g.weight_count());
  layer.bias = add_param(name + ".bias", g.out_channels);
  return layer;
}

Network::Network(const BackboneConfig& config, std::size_t outputs, std::uint64_t seed)
    : config_(config), outputs_(outputs) {
  if (config.stage_channels.empty() || config.stage_channels.size() != config.stage_strides.size()) {
    throw ShapeError("backbone needs matching stage channel/stride lists");
  }
  if (outputs == 0) throw ShapeError("network needs at least one output");
  const std::size_t extent = config.feature_extent();
  if (extent % config.pooled_size != 0) {
    throw ShapeError("final feature extent " + std::to_string(extent) + " not divisible by pooled size");
  }

  std::vector<std::pair<std::size_t, double>> init;  // (weight param, std)
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                  double gain) {
    ConvGeometry g{in, out, k, stride, k / 2};
    auto layer = make_conv(name, g);
    init.emplace_back(layer.weight, gain * std::sqrt(2.0 / static_cast<double>(g.patch_size())));
    return layer;
  };

  stem_ = conv("stem", config.in_channels, config.stem_channels, config.stem_kernel, config.stem_stride, 1.0);
  std::size_t channels = config.stem_channels;
  for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
    Stage stage;
    const std::size_t out = config.stage_channels[s];
    const std::string prefix = "stage" + std::to_string(s);
    if (config.stage_strides[s] != 1 || out != channels) {
      stage.has_projection = true;
      stage.projection = conv(prefix + ".proj", channels, out, 3, config.stage_strides[s], 1.0);
    }
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      ResidualBlock block;
      block.first = conv(bp + ".conv1", out, out, 3, 1, 1.0);
      // Residual branches start small so each block is close to identity.
      block.second = conv(bp + ".conv2", out, out, 3, 1, 0.25);
      stage.blocks.push_back(block);
    }
    channels = out;
    stages_.push_back(std::move(stage));
  }
  const std::size_t features = config.feature_count();
  head_weight_ = add_param("head.weight", outputs * features);
  head_bias_ = add_param("head.bias", outputs);
  init.emplace_back(head_weight_, std::sqrt(1.0 / static_cast<double>(features)));

  Rng rng(seed);
  for (auto [index, stddev] : init) {
    for (auto& w : params_[index].value) w = static_cast<float>(stddev * normal(rng));
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Matrix Network::forward(const Tensor& input, ForwardCache* cache) const {
  if (input.c != config_.in_channels || input.h != config_.input_size || input.w != config_.input_size) {
    throw ShapeError("network expects " + std::to_string(config_.in_channels) + "x" +
                     std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) +
                     " inputs, got " + std::to_string(input.c) + "x" + std::to_string(input.h) + "x" +
                     std::to_string(input.w));
  }
  if (input.n == 0) throw ShapeError("empty input batch");
  auto run_conv = [&](const ConvLayer& layer, const Tensor& x) {
    Tensor y;
    kernels::conv2d_forward(x, params_[layer.weight].value, params_[layer.bias].value, layer.geometry, y);
    return y;
  };

  std::vector<Tensor> local;
  std::vector<Tensor>& acts = cache ? cache->activations : local;
  acts.clear();

  Tensor x = run_conv(stem_, input);
  kernels::relu_forward(x);
  acts.push_back(x);
  for (const auto& stage : stages_) {
    if (stage.has_projection) {
      Tensor y = run_conv(stage.projection, acts.back());
      kernels::relu_forward(y);
      acts.push_back(std::move(y));
    }
    for (const auto& block : stage.blocks) {
      Tensor h = run_conv(block.first, acts.back());
      kernels::relu_forward(h);
      Tensor out = run_conv(block.second, h);
      kernels::add_inplace(out, acts.back());
      kernels::relu_forward(out);
      acts.push_back(std::move(h));
      acts.push_back(std::move(out));
    }
    if (!cache) {
      // Keep only the latest activation when no backward pass follows.
      Tensor last = std::move(acts.back());
      acts.clear();
      acts.push_back(std::move(last));
    }
  }

  Tensor pooled;
  kernels::avgpool_forward(acts.back(), config_.pooled_size, pooled);
  Matrix features(pooled.n, pooled.sample_size());
  features.data = std::move(pooled.data);

  Matrix output;
  kernels::linear_forward(features, params_[head_weight_].value, params_[head_bias_].value, output);
  if (cache) {
    cache->input = input;
    cache->features = std::move(features);
  }
  return output;
}

void Network::backward(const ForwardCache& cache, const Matrix& grad_output) {
  if (grad_output.cols != outputs_ || grad_output.rows != cache.features.rows) {
    throw ShapeError("backward: grad_output shape mismatch");
  }
  auto conv_back = [&](const ConvLayer& layer, const Tensor& in, const Tensor& gout, Tensor* gin) {
    kernels::conv2d_backward(in, params_[layer.weight].value, gout, layer.geometry, gin, params_[layer.weight].grad,
                             params_[layer.bias].grad);
  };

  Matrix grad_features;
  kernels::linear_backward(cache.features, params_[head_weight_].value, grad_output, &grad_features,
                           params_[head_weight_].grad, params_[head_bias_].grad);

  const auto& acts = cache.activations;
  std::size_t idx = acts.size() - 1;
  const Tensor& last = acts[idx];
  Tensor grad_pooled(last.n, last.c, config_.pooled_size, config_.pooled_size);
  grad_pooled.data = std::move(grad_features.data);
  Tensor grad;  // gradient w.r.t. acts[idx] (post-ReLU)
  kernels::avgpool_backward(grad_pooled, last.h, last.w, grad);

  for (std::size_t s = stages_.size(); s-- > 0;) {
    const auto& stage = stages_[s];
    for (std::size_t b = stage.blocks.size(); b-- > 0;) {
      const auto& block = stage.blocks[b];
      const Tensor& out = acts[idx];
      const Tensor& h = acts[idx - 1];
      const Tensor& in = acts[idx - 2];
      kernels::relu_backward(out, grad);
      Tensor grad_h;
      conv_back(block.second, h, grad, &grad_h);
      kernels::relu_backward(h, grad_h);
      Tensor grad_in;
      conv_back(block.first, in, grad_h, &grad_in);
      kernels::add_inplace(grad, grad_in);  // skip path + residual path
      idx -= 2;
    }
    if (stage.has_projection) {
      const Tensor& out = acts[idx];
      const Tensor& in = acts[idx - 1];
      kernels::relu_backward(out, grad);
      Tensor grad_in;
      conv_back(stage.projection, in, grad, &grad_in);
      grad = std::move(grad_in);
      idx -= 1;
    }
  }
  kernels::relu_backward(acts[0], grad);
  conv_back(stem_, cache.input, grad, nullptr);
}

Tensor make_input_batch(std::span<const Image* const> images, std::size_t channels) {
  if (images.empty()) throw ShapeError("empty image batch");
  const std::size_t h = images[0]->height, w = images[0]->width;
  Tensor t(images.size(), channels, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.height != h || img.width != w) throw ShapeError("images in a batch must share a size");
    float* dst = t.sample(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < h * w; ++p) dst[c * h * w + p] = img.pixels[p] * (1.0f / 255.0f);
    }
  }
  return t;
}

}  // namespace iapnet
