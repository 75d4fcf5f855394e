#include "pefsl/nn_ir.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pefsl/errors.hpp"

namespace pefsl {

using nlohmann::json;

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2x2: return "MaxPool2x2";
    case LayerKind::Add: return "Add";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
  }
  return "?";
}

static LayerKind layer_kind_from_name(const std::string& s) {
  static const std::map<std::string, LayerKind> m = {
      {"Conv2D", LayerKind::Conv2D},       {"BatchNorm", LayerKind::BatchNorm},
      {"ReLU", LayerKind::ReLU},           {"MaxPool2x2", LayerKind::MaxPool2x2},
      {"Add", LayerKind::Add},             {"GlobalAvgPool", LayerKind::GlobalAvgPool}};
  auto it = m.find(s);
  if (it == m.end()) throw ValidationError("unknown layer kind: " + s);
  return it->second;
}

const Layer* Graph::find(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

namespace {

struct Builder {
  Graph g;
  int next_id = 0;

  int conv(int input, int in_c, int out_c, int kernel, int stride) {
    Layer l;
    l.id = next_id++;
    l.kind = LayerKind::Conv2D;
    l.inputs = {input};
    l.in_channels = in_c;
    l.out_channels = out_c;
    l.kernel = kernel;
    l.stride = stride;
    l.weight_name = "conv" + std::to_string(l.id) + ".weight";
    g.nodes.push_back(l);
    return l.id;
  }

  int bn(int input) {
    Layer l;
    l.id = next_id++;
    l.kind = LayerKind::BatchNorm;
    l.inputs = {input};
    l.param_prefix = "bn" + std::to_string(l.id);
    g.nodes.push_back(l);
    return l.id;
  }

  int unary(LayerKind kind, int input) {
    Layer l;
    l.id = next_id++;
    l.kind = kind;
    l.inputs = {input};
    g.nodes.push_back(l);
    return l.id;
  }

  int add(int a, int b) {
    Layer l;
    l.id = next_id++;
    l.kind = LayerKind::Add;
    l.inputs = {a, b};
    g.nodes.push_back(l);
    return l.id;
  }
};

} // namespace

Graph build_backbone(const BackboneSpec& spec) {
  if (spec.first_feature_maps <= 0)
    throw ValidationError("invalid feature-map count: " + std::to_string(spec.first_feature_maps));
  if (spec.input_channels <= 0)
    throw ValidationError("invalid input channel count");
  const int blocks = spec.block_count();
  if (spec.input_resolution < (1 << blocks))
    throw ValidationError("resolution-too-small: input resolution " +
                          std::to_string(spec.input_resolution) + " cannot survive " +
                          std::to_string(blocks) + " downsampling stages");

  Builder b;
  b.g.input_shape = {spec.input_channels, spec.input_resolution, spec.input_resolution};

  const bool strided = spec.downsampling == Downsampling::Strided;
  int in_c = spec.input_channels;
  int block_input = kGraphInput;
  for (int blk = 0; blk < blocks; ++blk) {
    const int out_c = spec.first_feature_maps << blk;
    const int last_stride = strided ? 2 : 1;

    // main path: conv-bn-relu, conv-bn-relu, conv-bn
    int x = b.conv(block_input, in_c, out_c, 3, 1);
    x = b.bn(x);
    x = b.unary(LayerKind::ReLU, x);
    x = b.conv(x, out_c, out_c, 3, 1);
    x = b.bn(x);
    x = b.unary(LayerKind::ReLU, x);
    x = b.conv(x, out_c, out_c, 3, last_stride);
    x = b.bn(x);

    // projection skip
    int s = b.conv(block_input, in_c, out_c, 1, last_stride);
    s = b.bn(s);

    x = b.add(x, s);
    x = b.unary(LayerKind::ReLU, x);
    if (!strided) x = b.unary(LayerKind::MaxPool2x2, x);

    block_input = x;
    in_c = out_c;
  }
  b.g.nodes.push_back([&] {
    Layer l;
    l.id = b.next_id++;
    l.kind = LayerKind::GlobalAvgPool;
    l.inputs = {block_input};
    return l;
  }());
  b.g.output_dim = in_c;

  std::ostringstream id;
  id << "resnet" << (spec.depth == Depth::ResNet9 ? 9 : 12) << "-fm" << spec.first_feature_maps
     << (strided ? "-strided" : "-maxpool") << "-res" << spec.input_resolution << "-in"
     << spec.input_channels;
  b.g.id = id.str();
  return infer_shapes(std::move(b.g));
}

static int ceil_div(int a, int b) { return (a + b - 1) / b; }

Graph infer_shapes(Graph graph) {
  std::map<int, Shape> shapes;
  shapes[kGraphInput] = graph.input_shape;
  for (auto& n : graph.nodes) {
    for (int in : n.inputs)
      if (!shapes.count(in))
        throw ValidationError("graph not topologically ordered at node " + std::to_string(n.id));
    const Shape in0 = shapes.at(n.inputs.at(0));
    switch (n.kind) {
      case LayerKind::Conv2D: {
        if (n.kernel != 1 && n.kernel != 3) throw ValidationError("conv kernel must be 1 or 3");
        if (in0.c != n.in_channels)
          throw ValidationError("shape-mismatch: conv " + std::to_string(n.id) + " expects " +
                                std::to_string(n.in_channels) + " channels, got " +
                                std::to_string(in0.c));
        n.out_shape = {n.out_channels, ceil_div(in0.h, n.stride), ceil_div(in0.w, n.stride)};
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::ReLU:
        n.out_shape = in0;
        break;
      case LayerKind::MaxPool2x2:
        if (in0.h < 2 || in0.w < 2)
          throw ValidationError("resolution-too-small: pool input " + std::to_string(in0.h) + "x" +
                                std::to_string(in0.w));
        n.out_shape = {in0.c, ceil_div(in0.h, 2), ceil_div(in0.w, 2)};
        break;
      case LayerKind::Add: {
        if (n.inputs.size() != 2) throw ValidationError("add needs two inputs");
        const Shape in1 = shapes.at(n.inputs.at(1));
        if (!(in0 == in1))
          throw ValidationError("shape-mismatch: add operands (" + std::to_string(in0.c) + "," +
                                std::to_string(in0.h) + "," + std::to_string(in0.w) + ") vs (" +
                                std::to_string(in1.c) + "," + std::to_string(in1.h) + "," +
                                std::to_string(in1.w) + ")");
        n.out_shape = in0;
        break;
      }
      case LayerKind::GlobalAvgPool:
        n.out_shape = {in0.c, 1, 1};
        break;
    }
    if (n.out_shape.h <= 0 || n.out_shape.w <= 0)
      throw ValidationError("resolution-too-small: spatial size collapsed at node " +
                            std::to_string(n.id));
    shapes[n.id] = n.out_shape;
  }
  graph.shapes_inferred = true;
  if (!graph.nodes.empty()) graph.output_dim = graph.nodes.back().out_shape.c;
  return graph;
}

ComplexityReport complexity(const Graph& graph) {
  if (!graph.shapes_inferred) throw ValidationError("complexity requires a shape-inferred graph");
  ComplexityReport r;
  for (const auto& n : graph.nodes) {
    LayerComplexity lc;
    lc.layer_id = n.id;
    if (n.kind == LayerKind::Conv2D) {
      const long long k2 = 1ll * n.kernel * n.kernel;
      lc.macs = 1ll * n.out_shape.h * n.out_shape.w * n.out_channels * n.in_channels * k2;
      lc.params = 1ll * n.out_channels * n.in_channels * k2 + n.out_channels;
    }
    r.parameter_count += lc.params;
    r.mac_count += lc.macs;
    r.per_layer.push_back(lc);
  }
  return r;
}

Graph fold_batchnorm(const Graph& graph, WeightMap& weights) {
  Graph out;
  out.id = graph.id;
  out.input_shape = graph.input_shape;
  out.output_dim = graph.output_dim;

  std::map<int, int> remap; // bn id -> producing conv id
  for (const auto& n : graph.nodes) {
    if (n.kind != LayerKind::BatchNorm) {
      Layer copy = n;
      for (int& in : copy.inputs) {
        auto it = remap.find(in);
        if (it != remap.end()) in = it->second;
      }
      out.nodes.push_back(std::move(copy));
      continue;
    }
    const Layer* src = graph.find(n.inputs.at(0));
    if (!src || src->kind != LayerKind::Conv2D)
      throw ValidationError("orphan-batchnorm: node " + std::to_string(n.id) +
                            " does not follow a Conv2D");
    Layer* conv = nullptr;
    for (auto& c : out.nodes)
      if (c.id == src->id) conv = &c;
    if (!conv) throw ValidationError("orphan-batchnorm: conv already consumed");

    auto param = [&](const std::string& suffix) -> Tensor& {
      auto it = weights.find(n.param_prefix + suffix);
      if (it == weights.end())
        throw ValidationError("missing weight tensor: " + n.param_prefix + suffix);
      return it->second;
    };
    const Tensor& gamma = param(".gamma");
    const Tensor& beta = param(".beta");
    const Tensor& mean = param(".mean");
    const Tensor& var = param(".var");
    auto wit = weights.find(conv->weight_name);
    if (wit == weights.end())
      throw ValidationError("missing weight tensor: " + conv->weight_name);
    Tensor& w = wit->second;
    const int out_c = conv->out_channels;
    const size_t per_oc = w.element_count() / static_cast<size_t>(out_c);

    std::string bias_name = "conv" + std::to_string(conv->id) + ".bias";
    Tensor bias;
    if (!conv->bias_name.empty()) {
      bias = weights.at(conv->bias_name);
    } else {
      bias = make_f32({static_cast<uint32_t>(out_c)});
    }
    for (int oc = 0; oc < out_c; ++oc) {
      const double scale = gamma.f32[oc] / std::sqrt(static_cast<double>(var.f32[oc]) + n.bn_epsilon);
      for (size_t j = 0; j < per_oc; ++j)
        w.f32[oc * per_oc + j] = static_cast<float>(w.f32[oc * per_oc + j] * scale);
      bias.f32[oc] = static_cast<float>((bias.f32[oc] - mean.f32[oc]) * scale + beta.f32[oc]);
    }
    weights[bias_name] = std::move(bias);
    conv->bias_name = bias_name;

    weights.erase(n.param_prefix + ".gamma");
    weights.erase(n.param_prefix + ".beta");
    weights.erase(n.param_prefix + ".mean");
    weights.erase(n.param_prefix + ".var");
    remap[n.id] = conv->id;
  }
  out.shapes_inferred = false;
  return graph.shapes_inferred ? infer_shapes(std::move(out)) : out;
}

WeightMap identity_weights(const Graph& graph) {
  WeightMap w;
  for (const auto& n : graph.nodes) {
    if (n.kind == LayerKind::Conv2D) {
      w[n.weight_name] = make_f32({static_cast<uint32_t>(n.out_channels),
                                   static_cast<uint32_t>(n.in_channels),
                                   static_cast<uint32_t>(n.kernel), static_cast<uint32_t>(n.kernel)});
      if (!n.bias_name.empty()) w[n.bias_name] = make_f32({static_cast<uint32_t>(n.out_channels)});
    } else if (n.kind == LayerKind::BatchNorm) {
      const Layer* src = graph.find(n.inputs.at(0));
      const uint32_t c = src ? static_cast<uint32_t>(src->out_channels) : 1;
      Tensor gamma = make_f32({c}), beta = make_f32({c}), mean = make_f32({c}), var = make_f32({c});
      std::fill(gamma.f32.begin(), gamma.f32.end(), 1.0f);
      std::fill(var.f32.begin(), var.f32.end(), static_cast<float>(1.0 - n.bn_epsilon));
      w[n.param_prefix + ".gamma"] = std::move(gamma);
      w[n.param_prefix + ".beta"] = std::move(beta);
      w[n.param_prefix + ".mean"] = std::move(mean);
      w[n.param_prefix + ".var"] = std::move(var);
    }
  }
  return w;
}

std::string graph_to_json(const Graph& graph) {
  json nodes = json::array();
  json edges = json::array();
  for (const auto& n : graph.nodes) {
    json jn = {{"id", n.id}, {"kind", layer_kind_name(n.kind)}};
    if (n.kind == LayerKind::Conv2D) {
      jn["in_channels"] = n.in_channels;
      jn["out_channels"] = n.out_channels;
      jn["kernel"] = n.kernel;
      jn["stride"] = n.stride;
      jn["weight"] = n.weight_name;
      if (!n.bias_name.empty()) jn["bias"] = n.bias_name;
    } else if (n.kind == LayerKind::BatchNorm) {
      jn["params"] = n.param_prefix;
      jn["epsilon"] = n.bn_epsilon;
    }
    if (graph.shapes_inferred)
      jn["out_shape"] = {n.out_shape.c, n.out_shape.h, n.out_shape.w};
    nodes.push_back(jn);
    for (int in : n.inputs) edges.push_back({in, n.id});
  }
  json doc = {{"format", "pefsl-graph"},
              {"version", 1},
              {"id", graph.id},
              {"input_shape", {graph.input_shape.c, graph.input_shape.h, graph.input_shape.w}},
              {"output_dim", graph.output_dim},
              {"nodes", nodes},
              {"edges", edges}};
  return doc.dump(2);
}

Graph graph_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("graph json: ") + e.what());
  }
  if (doc.value("format", "") != "pefsl-graph" || doc.value("version", 0) != 1)
    throw ValidationError("graph json: unknown format/version");
  Graph g;
  g.id = doc.value("id", "");
  auto is_ = doc.at("input_shape");
  g.input_shape = {is_.at(0), is_.at(1), is_.at(2)};
  g.output_dim = doc.value("output_dim", 0);
  std::map<int, std::vector<int>> inputs;
  for (const auto& e : doc.at("edges")) inputs[e.at(1)].push_back(e.at(0));
  for (const auto& jn : doc.at("nodes")) {
    Layer l;
    l.id = jn.at("id");
    l.kind = layer_kind_from_name(jn.at("kind"));
    l.inputs = inputs[l.id];
    if (l.kind == LayerKind::Conv2D) {
      l.in_channels = jn.at("in_channels");
      l.out_channels = jn.at("out_channels");
      l.kernel = jn.at("kernel");
      l.stride = jn.at("stride");
      l.weight_name = jn.at("weight");
      l.bias_name = jn.value("bias", "");
    } else if (l.kind == LayerKind::BatchNorm) {
      l.param_prefix = jn.at("params");
      l.bn_epsilon = jn.value("epsilon", 1e-5);
    }
    g.nodes.push_back(std::move(l));
  }
  return infer_shapes(std::move(g));
}

std::string complexity_csv(const ComplexityReport& report) {
  std::ostringstream os;
  os << "layer_id,params,macs\n";
  for (const auto& lc : report.per_layer)
    os << lc.layer_id << "," << lc.params << "," << lc.macs << "\n";
  os << "total," << report.parameter_count << "," << report.mac_count << "\n";
  return os.str();
}

} // namespace pefsl
