#include <doctest.h>

#include <map>

#include "pefsl/accel_compiler.hpp"
#include "pefsl/errors.hpp"
#include "test_helpers.hpp"

using namespace pefsl;

namespace {

const char* kDemoArch = R"({"array_size":12,"data_format":"q8.8","local_memory_kib":256,
                            "accumulator_memory_kib":64,"clock_mhz":125})";
const char* kBaseArch = R"({"array_size":8,"data_format":"q8.8","local_memory_kib":128,
                            "accumulator_memory_kib":32,"clock_mhz":50})";

Program compile_backbone(const BackboneSpec& spec, const ArchConfig& arch) {
  Graph g = build_backbone(spec);
  WeightMap w = identity_weights(g);
  return lower(fold_batchnorm(g, w), arch);
}

long long total_cycles(const BackboneSpec& spec, const ArchConfig& arch) {
  return estimate_cycles(compile_backbone(spec, arch), arch).total_cycles;
}

} // namespace

TEST_CASE("parse demonstrator arch") {
  const ArchConfig a = parse_arch(kDemoArch);
  CHECK(a.array_size == 12);
  CHECK(a.data_format == DataFormat::Q8_8);
  CHECK(a.local_memory_kib == 256);
  CHECK(a.accumulator_memory_kib == 64);
  CHECK(a.clock_mhz == 125.0);

  const ArchConfig b = parse_arch(kBaseArch);
  CHECK(b.array_size == 8);
  CHECK(b.clock_mhz == 50.0);
}

TEST_CASE("arch validation") {
  CHECK_THROWS_AS(parse_arch(R"({"array_size":0,"data_format":"q8.8","local_memory_kib":256,
                                 "accumulator_memory_kib":64,"clock_mhz":125})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_arch(R"({"data_format":"q8.8","local_memory_kib":256,
                                 "accumulator_memory_kib":64,"clock_mhz":125})"),
                  ValidationError); // missing field
  CHECK_THROWS_AS(parse_arch(R"({"array_size":8,"data_format":"int4","local_memory_kib":256,
                                 "accumulator_memory_kib":64,"clock_mhz":125})"),
                  ValidationError); // unknown format
  CHECK_THROWS_AS(parse_arch(R"({"array_size":8,"data_format":"q8.8","local_memory_kib":256,
                                 "accumulator_memory_kib":64,"clock_mhz":125,"extra":1})"),
                  ValidationError); // unknown field
}

TEST_CASE("conv tiling matches the im2col formula") {
  // conv 3x3, 16->32 on a 16x16 input: M=256, K=144, N=32
  Graph g;
  g.input_shape = {16, 16, 16};
  Layer conv;
  conv.id = 0;
  conv.kind = LayerKind::Conv2D;
  conv.inputs = {kGraphInput};
  conv.in_channels = 16;
  conv.out_channels = 32;
  conv.kernel = 3;
  conv.stride = 1;
  conv.weight_name = "conv0.weight";
  g.nodes.push_back(conv);
  g = infer_shapes(std::move(g));

  const Program p = lower(g, parse_arch(kDemoArch));
  REQUIRE(p.tile_plans.size() == 1);
  const TilePlan& t = p.tile_plans[0];
  CHECK(t.rows == 256);
  CHECK(t.depth == 144);
  CHECK(t.cols == 32);
  CHECK(t.row_tiles * t.depth_tiles * t.col_tiles == 22 * 12 * 3);

  long long matmul_tiles = 0;
  for (const auto& ins : p.instructions)
    if (ins.kind == InstrKind::StreamMatmulTile) ++matmul_tiles;
  CHECK(matmul_tiles == 792);
}

TEST_CASE("1x1 conv on 1x1 spatial is a single tile") {
  Graph g;
  g.input_shape = {8, 1, 1};
  Layer conv;
  conv.id = 0;
  conv.kind = LayerKind::Conv2D;
  conv.inputs = {kGraphInput};
  conv.in_channels = 8;
  conv.out_channels = 8;
  conv.kernel = 1;
  conv.stride = 1;
  conv.weight_name = "conv0.weight";
  g.nodes.push_back(conv);
  g = infer_shapes(std::move(g));
  const Program p = lower(g, parse_arch(kDemoArch));
  CHECK(p.tile_plans[0].row_tiles * p.tile_plans[0].depth_tiles * p.tile_plans[0].col_tiles == 1);
}

TEST_CASE("unfolded batchnorm is rejected") {
  const Graph g = build_backbone({Depth::ResNet9, 8, Downsampling::Strided, 16});
  CHECK_THROWS_WITH_AS(lower(g, parse_arch(kDemoArch)), doctest::Contains("unsupported-layer"),
                       ValidationError);
}

TEST_CASE("per-tile cost formula") {
  Instruction load;
  load.kind = InstrKind::LoadWeightTile;
  Instruction mm;
  mm.kind = InstrKind::StreamMatmulTile;
  mm.m = 12;
  CHECK(instruction_cost(load, 12) + instruction_cost(mm, 12) == 46);
  mm.m = 8;
  CHECK(instruction_cost(load, 8) + instruction_cost(mm, 8) == 30);

  Program empty;
  empty.arch_id = arch_hash(parse_arch(kDemoArch));
  CHECK(estimate_cycles(empty, parse_arch(kDemoArch)).total_cycles == 0);
}

TEST_CASE("arch mismatch detected") {
  const Program p = compile_backbone({Depth::ResNet9, 8, Downsampling::Strided, 16},
                                     parse_arch(kDemoArch));
  CHECK_THROWS_WITH_AS(estimate_cycles(p, parse_arch(kBaseArch)),
                       doctest::Contains("arch-mismatch"), ValidationError);
}

TEST_CASE("cycle orderings across the design space") {
  ArchConfig a8 = parse_arch(kBaseArch);
  ArchConfig a16 = a8;
  a16.array_size = 16;
  for (int depth : {9, 12})
    for (int fm : {8, 16})
      for (auto ds : {Downsampling::Strided, Downsampling::MaxPool}) {
        const BackboneSpec spec{depth == 9 ? Depth::ResNet9 : Depth::ResNet12, fm, ds, 32};
        CHECK(total_cycles(spec, a16) <= total_cycles(spec, a8));
      }
  // strided strictly beats maxpool
  for (int fm : {8, 16}) {
    const BackboneSpec s{Depth::ResNet9, fm, Downsampling::Strided, 32};
    const BackboneSpec m{Depth::ResNet9, fm, Downsampling::MaxPool, 32};
    CHECK(total_cycles(s, a8) < total_cycles(m, a8));
  }
  // depth / width / resolution monotone
  const ArchConfig arch = parse_arch(kDemoArch);
  CHECK(total_cycles({Depth::ResNet9, 16, Downsampling::Strided, 32}, arch) <
        total_cycles({Depth::ResNet12, 16, Downsampling::Strided, 32}, arch));
  CHECK(total_cycles({Depth::ResNet9, 8, Downsampling::Strided, 32}, arch) <
        total_cycles({Depth::ResNet9, 16, Downsampling::Strided, 32}, arch));
  CHECK(total_cycles({Depth::ResNet9, 16, Downsampling::Strided, 32}, arch) <
        total_cycles({Depth::ResNet9, 16, Downsampling::Strided, 84}, arch));
}

TEST_CASE("tile m-coverage equals M per conv layer") {
  const ArchConfig arch = parse_arch(kDemoArch);
  const Program p = compile_backbone({Depth::ResNet12, 16, Downsampling::MaxPool, 32}, arch);
  std::map<int, long long> covered;
  std::map<int, long long> n_tiles_k_tiles; // per layer: depth_tiles*col_tiles
  for (const auto& t : p.tile_plans) n_tiles_k_tiles[t.layer_id] = t.depth_tiles * t.col_tiles;
  for (const auto& ins : p.instructions)
    if (ins.kind == InstrKind::StreamMatmulTile) covered[ins.layer_id] += ins.m;
  for (const auto& t : p.tile_plans)
    CHECK(covered.at(t.layer_id) == t.rows * n_tiles_k_tiles.at(t.layer_id));
}

TEST_CASE("lowering is deterministic and round-trips through json") {
  const ArchConfig arch = parse_arch(kDemoArch);
  const BackboneSpec spec{Depth::ResNet9, 16, Downsampling::Strided, 32};
  const Program a = compile_backbone(spec, arch);
  const Program b = compile_backbone(spec, arch);
  CHECK(program_to_json(a) == program_to_json(b));
  const Program c = program_from_json(program_to_json(a));
  CHECK(program_to_json(c) == program_to_json(a));
  CHECK(estimate_cycles(c, arch).total_cycles == estimate_cycles(a, arch).total_cycles);
}

TEST_CASE("memory infeasible tile") {
  ArchConfig arch = parse_arch(kDemoArch);
  arch.array_size = 256;
  arch.local_memory_kib = 1; // one 256x256 q8.8 tile = 128 KiB
  const Graph g = infer_shapes(build_backbone({Depth::ResNet9, 8, Downsampling::Strided, 16}));
  WeightMap w = identity_weights(g);
  CHECK_THROWS_WITH_AS(lower(fold_batchnorm(g, w), arch), doctest::Contains("memory-infeasible"),
                       ValidationError);
}
