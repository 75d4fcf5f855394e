#include <doctest.h>

#include <cmath>

#include "pefsl/errors.hpp"
#include "pefsl/nn_ir.hpp"
#include "pefsl/numerics.hpp"
#include "test_helpers.hpp"

using namespace pefsl;

namespace {

// minimal hand-built graphs for shape/complexity checks
Graph single_conv(int in_c, int out_c, int kernel, int stride, int res) {
  Graph g;
  g.input_shape = {in_c, res, res};
  Layer conv;
  conv.id = 0;
  conv.kind = LayerKind::Conv2D;
  conv.inputs = {kGraphInput};
  conv.in_channels = in_c;
  conv.out_channels = out_c;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.weight_name = "conv0.weight";
  g.nodes.push_back(conv);
  return infer_shapes(std::move(g));
}

int count_blocks(const Graph& g) {
  int adds = 0;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Add) ++adds;
  return adds;
}

} // namespace

TEST_CASE("resnet9 maxpool 32x32") {
  const Graph g = build_backbone({Depth::ResNet9, 16, Downsampling::MaxPool, 32});
  CHECK(count_blocks(g) == 3);
  CHECK(g.output_dim == 64);
  // spatial size before the global pool
  const Layer& last_pool = g.nodes[g.nodes.size() - 2];
  CHECK(last_pool.out_shape == Shape{64, 4, 4});
  // block channel schedule 16/32/64
  std::vector<int> conv_out;
  for (const auto& n : g.nodes)
    if (n.kind == LayerKind::Conv2D && n.kernel == 1) conv_out.push_back(n.out_channels);
  CHECK(conv_out == std::vector<int>{16, 32, 64});
}

TEST_CASE("resnet12 maxpool 32x32") {
  const Graph g = build_backbone({Depth::ResNet12, 16, Downsampling::MaxPool, 32});
  CHECK(count_blocks(g) == 4);
  CHECK(g.output_dim == 128);
  CHECK(g.nodes[g.nodes.size() - 2].out_shape == Shape{128, 2, 2});
}

TEST_CASE("resolution too small") {
  CHECK_THROWS_AS(build_backbone({Depth::ResNet9, 16, Downsampling::Strided, 2}),
                  ValidationError);
  CHECK_THROWS_AS(build_backbone({Depth::ResNet9, 0, Downsampling::Strided, 32}),
                  ValidationError);
}

TEST_CASE("shape inference basics") {
  CHECK(single_conv(16, 8, 3, 1, 32).nodes[0].out_shape == Shape{8, 32, 32});
  CHECK(single_conv(16, 8, 3, 2, 32).nodes[0].out_shape == Shape{8, 16, 16});
  CHECK(single_conv(16, 8, 3, 2, 21).nodes[0].out_shape == Shape{8, 11, 11}); // ceil

  Graph g;
  g.input_shape = {16, 32, 32};
  Layer pool;
  pool.id = 0;
  pool.kind = LayerKind::MaxPool2x2;
  pool.inputs = {kGraphInput};
  g.nodes.push_back(pool);
  g = infer_shapes(std::move(g));
  CHECK(g.nodes[0].out_shape == Shape{16, 16, 16});
}

TEST_CASE("add shape mismatch") {
  Graph g;
  g.input_shape = {16, 32, 32};
  Layer pool;
  pool.id = 0;
  pool.kind = LayerKind::MaxPool2x2;
  pool.inputs = {kGraphInput};
  g.nodes.push_back(pool);
  Layer add;
  add.id = 1;
  add.kind = LayerKind::Add;
  add.inputs = {kGraphInput, 0}; // (16,32,32) + (16,16,16)
  g.nodes.push_back(add);
  CHECK_THROWS_WITH_AS(infer_shapes(std::move(g)).nodes.size(),
                       doctest::Contains("shape-mismatch"), ValidationError);
}

TEST_CASE("complexity formula") {
  CHECK(complexity(single_conv(3, 16, 3, 1, 32)).mac_count == 442368);
  CHECK(complexity(single_conv(16, 32, 1, 1, 16)).mac_count == 131072);

  Graph empty;
  empty.input_shape = {4, 8, 8};
  Layer gap;
  gap.id = 0;
  gap.kind = LayerKind::GlobalAvgPool;
  gap.inputs = {kGraphInput};
  empty.nodes.push_back(gap);
  CHECK(complexity(infer_shapes(std::move(empty))).mac_count == 0);
}

TEST_CASE("complexity totals equal per-layer sums") {
  const ComplexityReport r = complexity(build_backbone({Depth::ResNet12, 16, Downsampling::MaxPool, 32}));
  long long macs = 0, params = 0;
  for (const auto& lc : r.per_layer) {
    macs += lc.macs;
    params += lc.params;
  }
  CHECK(macs == r.mac_count);
  CHECK(params == r.parameter_count);
}

TEST_CASE("fold identity and pure scale") {
  Graph g = single_conv(2, 3, 3, 1, 8);
  Layer bn;
  bn.id = 1;
  bn.kind = LayerKind::BatchNorm;
  bn.inputs = {0};
  bn.param_prefix = "bn1";
  g.nodes.push_back(bn);
  g = infer_shapes(std::move(g));

  WeightMap w = test::random_weights(g, 1);
  const WeightMap before = w;
  SUBCASE("identity normalization keeps weights") {
    for (auto& v : w.at("bn1.gamma").f32) v = 1.0f;
    for (auto& v : w.at("bn1.beta").f32) v = 0.0f;
    for (auto& v : w.at("bn1.mean").f32) v = 0.0f;
    Graph folded = fold_batchnorm(g, w);
    for (size_t i = 0; i < w.at("conv0.weight").f32.size(); ++i)
      CHECK(w.at("conv0.weight").f32[i] ==
            doctest::Approx(before.at("conv0.weight").f32[i]).epsilon(1e-6));
    CHECK(w.count("bn1.gamma") == 0);
    for (const auto& n : folded.nodes) CHECK(n.kind != LayerKind::BatchNorm);
  }
  SUBCASE("gamma=2 doubles weights and bias") {
    for (auto& v : w.at("bn1.gamma").f32) v = 2.0f;
    for (auto& v : w.at("bn1.beta").f32) v = 0.0f;
    for (auto& v : w.at("bn1.mean").f32) v = 0.0f;
    fold_batchnorm(g, w);
    for (size_t i = 0; i < w.at("conv0.weight").f32.size(); ++i)
      CHECK(w.at("conv0.weight").f32[i] ==
            doctest::Approx(2.0f * before.at("conv0.weight").f32[i]).epsilon(1e-6));
  }
}

TEST_CASE("fold matches unfolded float execution within 1e-5") {
  Graph g = single_conv(3, 4, 3, 1, 8);
  Layer bn;
  bn.id = 1;
  bn.kind = LayerKind::BatchNorm;
  bn.inputs = {0};
  bn.param_prefix = "bn1";
  g.nodes.push_back(bn);
  g = infer_shapes(std::move(g));

  WeightMap w = test::random_weights(g, 7);
  DeterministicRng rng(3);
  for (auto& v : w.at("bn1.var").f32) v = static_cast<float>(0.5 + rng.uniform());
  const Tensor input = test::random_input(g.input_shape, 11);

  // unfolded baseline: apply BN by hand on the conv output
  WeightMap w_conv = w;
  Graph conv_only = single_conv(3, 4, 3, 1, 8);
  const Tensor conv_out = execute_reference(conv_only, w_conv, input, ExecMode::Float);
  std::vector<float> expected(conv_out.f32.size());
  for (int c = 0; c < 4; ++c) {
    const double scale =
        w.at("bn1.gamma").f32[c] / std::sqrt(static_cast<double>(w.at("bn1.var").f32[c]) + 1e-5);
    for (int i = 0; i < 64; ++i)
      expected[c * 64 + i] = static_cast<float>(
          (conv_out.f32[c * 64 + i] - w.at("bn1.mean").f32[c]) * scale + w.at("bn1.beta").f32[c]);
  }

  Graph folded = fold_batchnorm(g, w);
  const Tensor folded_out = execute_reference(folded, w, input, ExecMode::Float);
  for (size_t i = 0; i < expected.size(); ++i)
    CHECK(std::abs(folded_out.f32[i] - expected[i]) <= 1e-5);
}

TEST_CASE("orphan batchnorm") {
  Graph g;
  g.input_shape = {3, 8, 8};
  Layer bn;
  bn.id = 0;
  bn.kind = LayerKind::BatchNorm;
  bn.inputs = {kGraphInput};
  bn.param_prefix = "bn0";
  g.nodes.push_back(bn);
  g = infer_shapes(std::move(g));
  WeightMap w = identity_weights(g);
  CHECK_THROWS_WITH_AS(fold_batchnorm(g, w), doctest::Contains("orphan-batchnorm"),
                       ValidationError);
}

TEST_CASE("mac count orderings") {
  auto macs = [](Depth d, int fm, Downsampling ds, int res) {
    return complexity(build_backbone({d, fm, ds, res})).mac_count;
  };
  // strided strictly cheaper than maxpool
  for (int fm : {8, 16})
    for (int res : {16, 32})
      CHECK(macs(Depth::ResNet9, fm, Downsampling::Strided, res) <
            macs(Depth::ResNet9, fm, Downsampling::MaxPool, res));
  // depth, width and resolution monotonicity
  CHECK(macs(Depth::ResNet9, 16, Downsampling::MaxPool, 32) <
        macs(Depth::ResNet12, 16, Downsampling::MaxPool, 32));
  CHECK(macs(Depth::ResNet9, 8, Downsampling::Strided, 32) <
        macs(Depth::ResNet9, 16, Downsampling::Strided, 32));
  CHECK(macs(Depth::ResNet9, 16, Downsampling::Strided, 16) <
        macs(Depth::ResNet9, 16, Downsampling::Strided, 32));
}

TEST_CASE("formula macs equal executor counter") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const BackboneSpec spec = test::random_spec(seed);
    Graph g = build_backbone(spec);
    WeightMap w = test::random_weights(g, seed + 100);
    Graph folded = fold_batchnorm(g, w);
    const Tensor input = test::random_input(folded.input_shape, seed + 200);
    ExecStats stats;
    execute_reference(folded, w, input, ExecMode::Float, &stats);
    CHECK(stats.mac_count == complexity(folded).mac_count);
  }
}

TEST_CASE("build is deterministic and json round-trips") {
  const BackboneSpec spec{Depth::ResNet12, 16, Downsampling::Strided, 32};
  const Graph a = build_backbone(spec);
  const Graph b = build_backbone(spec);
  CHECK(graph_to_json(a) == graph_to_json(b));
  const Graph c = graph_from_json(graph_to_json(a));
  CHECK(graph_to_json(c) == graph_to_json(a));
}
