#include "segmodel.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace alignlab {

namespace {

std::string key(const char* stem, int block, const char* leaf) {
  return std::string(stem) + std::to_string(block) + "." + leaf;
}

Tensor uniform_tensor(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

const Tensor& require(const ModelParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw DataError("model parameters lack '" + name + "'");
  return it->second;
}

}  // namespace

ModelParams init_params(std::uint64_t seed, const ModelConfig& config) {
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(StreamTag::Model)));
  ModelParams p;
  const std::size_t k = config.kernel;
  std::size_t in = 3;
  for (int l = 1; l <= kNumBlocks; ++l) {
    const std::size_t out = config.widths[l - 1];
    p[key("enc", l, "weight")] = uniform_tensor(rng, {out, in, k, k}, in * k * k);
    p[key("enc", l, "bias")] = Tensor({out, 1, 1});
    in = out;
  }
  for (int l = 1; l <= kNumBlocks; ++l) {
    const std::size_t c = config.widths[l - 1];
    p[key("head", l, "weight")] = uniform_tensor(rng, {config.hidden, c, 1, 1}, c);
  }
  p["dec.bias"] = Tensor({config.hidden, 1, 1});
  p["cls.weight"] = uniform_tensor(rng, {config.num_classes, config.hidden, 1, 1}, config.hidden);
  p["cls.bias"] = Tensor({config.num_classes, 1, 1});
  return p;
}

ModelConfig infer_config(const ModelParams& params) {
  ModelConfig c;
  for (int l = 1; l <= kNumBlocks; ++l) {
    const Tensor& w = require(params, key("enc", l, "weight"));
    if (w.rank() != 4) throw DataError("parameter enc" + std::to_string(l) + ".weight must be rank 4");
    c.widths[l - 1] = w.dim(0);
    c.kernel = w.dim(2);
  }
  c.hidden = require(params, "dec.bias").dim(0);
  c.num_classes = require(params, "cls.weight").dim(0);
  return c;
}

ParamNodes add_parameters(Graph& graph, const ModelParams& params) {
  ParamNodes nodes;
  for (const auto& [name, t] : params) nodes[name] = graph.parameter(name, t);
  return nodes;
}

ParamNodes add_constants(Graph& graph, const ModelParams& params) {
  ParamNodes nodes;
  for (const auto& [name, t] : params) nodes[name] = graph.constant(t);
  return nodes;
}

PyramidNodes forward(Graph& graph, const ParamNodes& params, NodeId image) {
  const Shape& s = graph.shape(image);
  if (s.size() != 3 || s[0] != 3) throw ShapeError("forward: image must be (3,H,W), got " + shape_string(s));
  if (s[1] % 16 != 0 || s[2] % 16 != 0) {
    throw ShapeError("forward: image dims " + shape_string(s) + " must be divisible by 16");
  }
  auto p = [&](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("forward: missing parameter node '" + name + "'");
    return it->second;
  };

  PyramidNodes out{};
  NodeId x = graph.shift(image, -0.5);
  for (int l = 1; l <= kNumBlocks; ++l) {
    x = graph.downsample2(x);
    x = graph.conv2d(x, p(key("enc", l, "weight")));
    x = graph.add(x, p(key("enc", l, "bias")));
    x = graph.relu(x);
    out.features[l - 1] = x;
  }

  NodeId acc{};
  for (int l = 1; l <= kNumBlocks; ++l) {
    NodeId proj = graph.conv2d(out.features[l - 1], p(key("head", l, "weight")));
    if (l > 1) proj = graph.upsample(proj, std::size_t{1} << (l - 1));
    acc = l == 1 ? proj : graph.add(acc, proj);
  }
  NodeId hidden = graph.relu(graph.add(acc, p("dec.bias")));
  NodeId logits = graph.add(graph.conv2d(hidden, p("cls.weight")), p("cls.bias"));
  out.logits = graph.upsample(logits, 2);
  return out;
}

FeaturePyramid forward(const ModelParams& params, const Tensor& image) {
  Graph g;
  auto nodes = add_constants(g, params);
  auto pyr = forward(g, nodes, g.input("image", image));
  FeaturePyramid out;
  for (int l = 0; l < kNumBlocks; ++l) out.features[l] = g.value(pyr.features[l]);
  out.logits = g.value(pyr.logits);
  return out;
}

std::vector<std::uint8_t> argmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax_channels: expected (K,H,W), got " + shape_string(logits.shape()));
  const std::size_t K = logits.dim(0), P = logits.dim(1) * logits.dim(2);
  std::vector<std::uint8_t> out(P, 0);
  for (std::size_t p = 0; p < P; ++p) {
    double best = logits[p];
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[k * P + p] > best) {
        best = logits[k * P + p];
        out[p] = static_cast<std::uint8_t>(k);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> predict_labels(const ModelParams& params, const Tensor& image) {
  return argmax_channels(forward(params, image).logits);
}

}  // namespace alignlab
