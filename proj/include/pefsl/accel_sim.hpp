#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pefsl/accel_compiler.hpp"
#include "pefsl/tensor.hpp"

namespace pefsl {

struct TraceEntry {
  size_t instr_index = 0;
  InstrKind kind = InstrKind::CopyOp;
  long long cycles = 0;
  uint64_t checksum = 0;
};

struct SimResult {
  Tensor features;
  long long cycles = 0;
  std::vector<TraceEntry> trace; // filled only when requested
};

// Functional model of the A x A array: streams the instruction list, doing
// integer MACs in wide accumulators (Q8.8) or double accumulation (float),
// with one round+saturate per output element at write-back. Cycle totals
// come from the same cost formula the compiler uses.
SimResult run(const Program& program, const WeightMap& weights, const Tensor& input,
              const ArchConfig& arch, bool with_trace = false);

std::string trace_csv(const std::vector<TraceEntry>& trace);

} // namespace pefsl
