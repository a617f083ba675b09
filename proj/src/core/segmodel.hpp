#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graph.hpp"
#include "tensor.hpp"

namespace alignlab {

inline constexpr int kNumBlocks = 4;

struct ModelConfig {
  std::array<std::size_t, kNumBlocks> widths{16, 32, 64, 128};
  std::size_t hidden = 32;       // decoder width
  std::size_t num_classes = 10;
  std::size_t kernel = 3;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named parameter tensors: enc{1..4}.weight/bias, head{1..4}.weight,
// dec.bias, cls.weight, cls.bias.
using ModelParams = NamedTensors;

ModelParams init_params(std::uint64_t seed, const ModelConfig& config = {});
// Recovers the architecture from parameter shapes (checkpoints carry no config).
ModelConfig infer_config(const ModelParams& params);

using ParamNodes = std::map<std::string, NodeId>;
ParamNodes add_parameters(Graph& graph, const ModelParams& params);
ParamNodes add_constants(Graph& graph, const ModelParams& params);

struct PyramidNodes {
  std::array<NodeId, kNumBlocks> features;  // f_l: (C_l, H/2^l, W/2^l)
  NodeId logits;                            // (K, H, W)
};

// Encoder block l: 2x2 average downsample, 3x3 conv + bias, relu; the relu
// output is the block's alignment tap. Decoder: 1x1 projection of every tap,
// nearest-upsampled to H/2 and summed, relu, 1x1 classifier, upsample x2.
PyramidNodes forward(Graph& graph, const ParamNodes& params, NodeId image);

struct FeaturePyramid {
  std::array<Tensor, kNumBlocks> features;
  Tensor logits;
};

FeaturePyramid forward(const ModelParams& params, const Tensor& image);

// Argmax over classes of the logits, row-major H*W.
std::vector<std::uint8_t> predict_labels(const ModelParams& params, const Tensor& image);
std::vector<std::uint8_t> argmax_channels(const Tensor& logits);

}  // namespace alignlab
