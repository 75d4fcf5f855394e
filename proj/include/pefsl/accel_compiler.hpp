#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pefsl/nn_ir.hpp"

namespace pefsl {

enum class DataFormat { Float32, Q8_8 };

// Parameterized systolic array (A x A processing elements).
struct ArchConfig {
  int array_size = 12;
  DataFormat data_format = DataFormat::Q8_8;
  int local_memory_kib = 256;
  int accumulator_memory_kib = 64;
  double clock_mhz = 125.0;
};

// Strict JSON parse: the five fields, unknown fields rejected.
ArchConfig parse_arch(const std::string& json_text);
ArchConfig load_arch(const std::string& path);
std::string arch_to_json(const ArchConfig& arch);
uint64_t arch_hash(const ArchConfig& arch);

enum class InstrKind { LoadWeightTile, StreamMatmulTile, ApplyBiasRelu, MaxPoolOp, AvgPoolOp, CopyOp };

const char* instr_kind_name(InstrKind k);

struct Instruction {
  InstrKind kind = InstrKind::CopyOp;
  int layer_id = 0;
  // Matmul tile geometry (rows streamed, reduction depth, columns) and the
  // tile's offsets in the full im2col matrix.
  int m = 0, k = 0, n = 0;
  long long m_off = 0, k_off = 0, n_off = 0;
  // Element-wise op payload.
  long long elements = 0;
  // Flags for ApplyBiasRelu.
  bool with_bias = false;
  bool with_relu = false;
  long long cycles = 0;
};

struct TilePlan {
  int layer_id = 0;
  long long rows = 0, depth = 0, cols = 0; // im2col M, K, N
  long long row_tiles = 0, depth_tiles = 0, col_tiles = 0;
};

// Execution metadata carried by the program so a compiled artifact can be
// simulated without the source graph.
struct ProgramLayer {
  int id = 0;
  LayerKind kind = LayerKind::ReLU;
  std::vector<int> inputs;
  Shape in_shape, out_shape;
  int kernel = 0, stride = 1;
  int in_channels = 0, out_channels = 0;
  std::string weight_name, bias_name;
};

struct Program {
  std::string graph_id;
  uint64_t arch_id = 0;
  std::vector<ProgramLayer> layers;
  std::vector<Instruction> instructions;
  std::vector<TilePlan> tile_plans;
};

struct LayerCycles {
  int layer_id = 0;
  LayerKind kind = LayerKind::ReLU;
  long long cycles = 0;
};

struct CycleReport {
  long long total_cycles = 0;
  std::vector<LayerCycles> per_layer;
  double latency_ms(double clock_mhz) const { return static_cast<double>(total_cycles) / (clock_mhz * 1e3); }
};

// Shared cost formula. Matmul tile: A (weight load) + m + 2(A-1) fill/drain,
// split as LoadWeightTile = A and StreamMatmulTile = m + 2(A-1).
// Element-wise ops: ceil(elements / A).
long long instruction_cost(const Instruction& ins, int array_size);

// im2col lowering: each Conv2D becomes ceil(M/A)*ceil(K/A)*ceil(N/A) matmul
// tiles (M = out_h*out_w, K = in_c*k^2, N = out_c) plus a bias pass;
// ReLU/pool/add become element-wise ops. Requires a shape-inferred,
// BN-folded graph.
Program lower(const Graph& graph, const ArchConfig& arch);

CycleReport estimate_cycles(const Program& program, const ArchConfig& arch);

std::string program_to_json(const Program& program);
Program program_from_json(const std::string& text);

std::string cycle_report_csv(const CycleReport& report);

} // namespace pefsl
