#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pefsl/tensor.hpp"

namespace pefsl {

enum class Depth { ResNet9, ResNet12 };
enum class Downsampling { Strided, MaxPool };

// Hyperparameterized description of a few-shot backbone.
struct BackboneSpec {
  Depth depth = Depth::ResNet9;
  int first_feature_maps = 16;
  Downsampling downsampling = Downsampling::Strided;
  int input_resolution = 32;
  int input_channels = 3;

  int block_count() const { return depth == Depth::ResNet9 ? 3 : 4; }
};

enum class LayerKind { Conv2D, BatchNorm, ReLU, MaxPool2x2, Add, GlobalAvgPool };

const char* layer_kind_name(LayerKind k);

struct Shape {
  int c = 0, h = 0, w = 0;
  long long elems() const { return 1ll * c * h * w; }
  bool operator==(const Shape&) const = default;
};

// Graph input is referenced by the sentinel id kGraphInput.
constexpr int kGraphInput = -1;

struct Layer {
  int id = 0;
  LayerKind kind = LayerKind::Conv2D;
  std::vector<int> inputs;

  // Conv2D attributes (same-style padding, kernel in {1,3}, stride in {1,2}).
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  std::string weight_name;
  std::string bias_name; // set after BN folding

  // BatchNorm attributes; parameter tensors live in the weight map under
  // <param_prefix>.gamma/.beta/.mean/.var.
  std::string param_prefix;
  double bn_epsilon = 1e-5;

  // Filled by infer_shapes.
  Shape out_shape;
};

struct Graph {
  std::string id;          // stable identity derived from the spec
  Shape input_shape;
  std::vector<Layer> nodes; // topological order, last node is the output
  int output_dim = 0;
  bool shapes_inferred = false;

  const Layer* find(int id) const;
};

struct LayerComplexity {
  int layer_id = 0;
  long long params = 0;
  long long macs = 0;
};

struct ComplexityReport {
  long long parameter_count = 0;
  long long mac_count = 0;
  std::vector<LayerComplexity> per_layer;
};

// Builds the residual backbone: one block per stage, three 3x3 convs on the
// main path, a 1x1 projection skip, BN after each conv, one downsampling
// action per block. Output channels double per block starting at
// first_feature_maps; the graph ends with GlobalAvgPool.
Graph build_backbone(const BackboneSpec& spec);

// Annotates every node with its output shape. Stride-2 convs and 2x2 pools
// halve spatial dims with ceiling division (same-padding).
Graph infer_shapes(Graph graph);

// Conv2D macs = out_h*out_w*out_c*in_c*k^2; other kinds count 0 macs.
ComplexityReport complexity(const Graph& graph);

// Replaces each (Conv, BN) pair by a single biased conv:
//   w' = w * gamma / sqrt(var + eps),  b' = (b - mean) * w_scale + beta.
// Mutates `weights` in place (adds folded conv tensors, drops BN params).
Graph fold_batchnorm(const Graph& graph, WeightMap& weights);

// Identity parameters for every tensor the graph references: conv weights
// zero, BN gamma=1, beta=0, mean=0, var=1-eps. Enough to fold and compile a
// graph when no trained weights exist (latency-only sweeps).
WeightMap identity_weights(const Graph& graph);

// Versioned JSON serialization of the graph (nodes with explicit ids,
// edge list, attributes).
std::string graph_to_json(const Graph& graph);
Graph graph_from_json(const std::string& text);

std::string complexity_csv(const ComplexityReport& report);

} // namespace pefsl
