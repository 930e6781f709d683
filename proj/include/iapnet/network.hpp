#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iapnet/image.hpp"
#include "iapnet/kernels.hpp"

namespace iapnet {

enum class BackboneScale { kFull, kTiny };

std::string to_string(BackboneScale scale);
BackboneScale parse_backbone_scale(const std::string& text);

// Residual backbone description. Each stage optionally begins with a strided
// 3x3 projection conv, followed by `blocks_per_stage` two-conv residual
// blocks; the final feature map is average-pooled to pooled_size^2 cells.
struct BackboneConfig {
  std::size_t input_size = 224;
  std::size_t in_channels = 3;  // grayscale replicated
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  std::vector<std::size_t> stage_channels{64, 128, 256, 512};
  std::vector<std::size_t> stage_strides{2, 2, 2, 2};
  std::size_t blocks_per_stage = 2;
  std::size_t pooled_size = 1;

  std::size_t feature_extent() const;  // spatial extent entering the pool
  std::size_t feature_count() const;   // flattened pooled features

  bool operator==(const BackboneConfig&) const = default;
};

// ResNet-18 stage layout at 224x224 with global pooling.
BackboneConfig full_backbone();
// Three narrow stages at 64x64 keeping a 4x4 pooled grid.
BackboneConfig tiny_backbone();
BackboneConfig backbone_for(BackboneScale scale);

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;
};

struct ConvLayer {
  ConvGeometry geometry;
  std::size_t weight = 0;  // parameter indices
  std::size_t bias = 0;
};

struct ResidualBlock {
  ConvLayer first;
  ConvLayer second;
};

struct Stage {
  bool has_projection = false;
  ConvLayer projection;
  std::vector<ResidualBlock> blocks;
};

// Activations retained by forward() for backward().
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> activations;  // post-ReLU outputs in execution order
  Matrix features;
};

class Network {
 public:
  Network() = default;
  Network(const BackboneConfig& config, std::size_t outputs, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  std::size_t outputs() const { return outputs_; }

  // input: N x in_channels x S x S. Returns N x outputs.
  Matrix forward(const Tensor& input, ForwardCache* cache = nullptr) const;
  // Fills Parameter::grad from dL/d(output).
  void backward(const ForwardCache& cache, const Matrix& grad_output);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Parameter& head_bias() { return params_[head_bias_]; }

 private:
  std::size_t add_param(std::string name, std::size_t count);
  ConvLayer make_conv(const std::string& name, const ConvGeometry& g);

  BackboneConfig config_;
  std::size_t outputs_ = 0;
  std::vector<Parameter> params_;
  ConvLayer stem_;
  std::vector<Stage> stages_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
};

// Stacks preprocessed [0,255] images into an N x channels x S x S tensor,
// replicating the gray channel and scaling to [0,1].
Tensor make_input_batch(std::span<const Image* const> images, std::size_t channels);

}  // namespace iapnet
