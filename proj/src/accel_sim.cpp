#include "pefsl/accel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "pefsl/errors.hpp"
#include "pefsl/numerics.hpp"

namespace pefsl {

namespace {

constexpr int kFrac = 8;

struct ConvState {
  const ProgramLayer* layer = nullptr;
  long long rows = 0, cols = 0; // im2col M, N
  std::vector<int64_t> iacc;
  std::vector<double> facc;
};

struct Sim {
  const Program& program;
  const WeightMap& weights;
  const ArchConfig& arch;
  bool fixed;
  std::map<int, Tensor> outputs;
  std::map<int, ConvState> convs;
  std::map<int, const ProgramLayer*> layer_by_id;

  const Tensor& weight(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end()) throw ValidationError("missing weight tensor: " + name);
    return it->second;
  }

  const Tensor& input_of(const ProgramLayer& pl, int idx = 0) const {
    return outputs.at(pl.inputs.at(idx));
  }

  // im2col A-matrix index: row = output position, col = (ic, ky, kx).
  // Returns -1 for zero-padding positions; those contribute nothing, matching
  // the reference executor's skipped terms (keeps float sums bit-identical).
  long long patch_index(const ProgramLayer& pl, long long row, long long col) const {
    const int k = pl.kernel, pad = (k - 1) / 2, s = pl.stride;
    const int ih = pl.in_shape.h, iw = pl.in_shape.w;
    const int ow = pl.out_shape.w;
    const long long oy = row / ow, ox = row % ow;
    const long long cc = col / (k * k), rem = col % (k * k);
    const long long ky = rem / k, kx = rem % k;
    const long long iy = oy * s + ky - pad, ix = ox * s + kx - pad;
    if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) return -1;
    return (cc * ih + iy) * iw + ix;
  }

  ConvState& conv_state(const ProgramLayer& pl) {
    auto it = convs.find(pl.id);
    if (it != convs.end()) return it->second;
    ConvState st;
    st.layer = &pl;
    st.rows = 1ll * pl.out_shape.h * pl.out_shape.w;
    st.cols = pl.out_channels;
    if (fixed)
      st.iacc.assign(static_cast<size_t>(st.rows * st.cols), 0);
    else
      st.facc.assign(static_cast<size_t>(st.rows * st.cols), 0.0);
    return convs.emplace(pl.id, std::move(st)).first->second;
  }

  void matmul_tile(const Instruction& ins) {
    const ProgramLayer& pl = *layer_by_id.at(ins.layer_id);
    ConvState& st = conv_state(pl);
    const Tensor& in = input_of(pl);
    const Tensor& w = weight(pl.weight_name);
    const int kk = pl.kernel * pl.kernel;
    for (int mi = 0; mi < ins.m; ++mi) {
      const long long row = ins.m_off + mi;
      for (int ni = 0; ni < ins.n; ++ni) {
        const long long col = ins.n_off + ni;
        // weight matrix B[k][n] = w[n][ic][ky][kx]; accumulate straight into
        // the layer accumulator so the reduction order over k is the same
        // flat sequence the reference executor uses
        const size_t dst = static_cast<size_t>(row * st.cols + col);
        for (int ki = 0; ki < ins.k; ++ki) {
          const long long kg = ins.k_off + ki;
          const long long src = patch_index(pl, row, kg);
          if (src < 0) continue;
          if (fixed)
            st.iacc[dst] += static_cast<int64_t>(in.q[src]) * w.q[col * (pl.in_channels * kk) + kg];
          else
            st.facc[dst] +=
                static_cast<double>(in.f32[src]) * w.f32[col * (pl.in_channels * kk) + kg];
        }
      }
    }
  }

  void writeback(const ProgramLayer& pl, const Instruction& ins) {
    ConvState& st = conv_state(pl);
    const Tensor* bias = ins.with_bias ? &weight(pl.bias_name) : nullptr;
    Tensor o = fixed ? make_q({static_cast<uint32_t>(pl.out_shape.c),
                               static_cast<uint32_t>(pl.out_shape.h),
                               static_cast<uint32_t>(pl.out_shape.w)})
                     : make_f32({static_cast<uint32_t>(pl.out_shape.c),
                                 static_cast<uint32_t>(pl.out_shape.h),
                                 static_cast<uint32_t>(pl.out_shape.w)});
    for (long long col = 0; col < st.cols; ++col)
      for (long long row = 0; row < st.rows; ++row) {
        const size_t dst = static_cast<size_t>(col * st.rows + row); // CHW layout
        const size_t src = static_cast<size_t>(row * st.cols + col);
        if (fixed) {
          int64_t acc = st.iacc[src];
          if (bias) acc += static_cast<int64_t>(bias->q[col]) << kFrac;
          o.q[dst] = saturate16(round_shift_half_even(acc, kFrac));
        } else {
          double acc = st.facc[src];
          if (bias) acc += bias->f32[col];
          o.f32[dst] = static_cast<float>(acc);
        }
      }
    outputs[pl.id] = std::move(o);
  }

  void relu(const ProgramLayer& pl) {
    Tensor o = input_of(pl);
    if (fixed)
      for (auto& v : o.q) v = std::max<int16_t>(v, 0);
    else
      for (auto& v : o.f32) v = std::max(v, 0.0f);
    outputs[pl.id] = std::move(o);
  }

  void add(const ProgramLayer& pl) {
    Tensor o = input_of(pl, 0);
    const Tensor& b = input_of(pl, 1);
    if (fixed)
      for (size_t i = 0; i < o.q.size(); ++i)
        o.q[i] = saturate16(static_cast<int64_t>(o.q[i]) + b.q[i]);
    else
      for (size_t i = 0; i < o.f32.size(); ++i) o.f32[i] += b.f32[i];
    outputs[pl.id] = std::move(o);
  }

  void maxpool(const ProgramLayer& pl) {
    const Tensor& in = input_of(pl);
    const int c = pl.in_shape.c, ih = pl.in_shape.h, iw = pl.in_shape.w;
    const int oh = pl.out_shape.h, ow = pl.out_shape.w;
    Tensor o = fixed ? make_q({static_cast<uint32_t>(c), static_cast<uint32_t>(oh),
                               static_cast<uint32_t>(ow)})
                     : make_f32({static_cast<uint32_t>(c), static_cast<uint32_t>(oh),
                                 static_cast<uint32_t>(ow)});
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          if (fixed) {
            int16_t m = std::numeric_limits<int16_t>::min();
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = 2 * y + dy, ix = 2 * x + dx;
                if (iy < ih && ix < iw) m = std::max(m, in.q[(cc * ih + iy) * iw + ix]);
              }
            o.q[(cc * oh + y) * ow + x] = m;
          } else {
            float m = -std::numeric_limits<float>::infinity();
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = 2 * y + dy, ix = 2 * x + dx;
                if (iy < ih && ix < iw) m = std::max(m, in.f32[(cc * ih + iy) * iw + ix]);
              }
            o.f32[(cc * oh + y) * ow + x] = m;
          }
        }
    outputs[pl.id] = std::move(o);
  }

  void avgpool(const ProgramLayer& pl) {
    const Tensor& in = input_of(pl);
    const int c = pl.in_shape.c;
    const long long count = 1ll * pl.in_shape.h * pl.in_shape.w;
    Tensor o = fixed ? make_q({static_cast<uint32_t>(c), 1, 1})
                     : make_f32({static_cast<uint32_t>(c), 1, 1});
    for (int cc = 0; cc < c; ++cc) {
      if (fixed) {
        int64_t sum = 0;
        for (long long i = 0; i < count; ++i) sum += in.q[cc * count + i];
        o.q[cc] = saturate16(round_div_half_even(sum, count));
      } else {
        double sum = 0.0;
        for (long long i = 0; i < count; ++i) sum += in.f32[cc * count + i];
        o.f32[cc] = static_cast<float>(sum / static_cast<double>(count));
      }
    }
    outputs[pl.id] = std::move(o);
  }
};

} // namespace

SimResult run(const Program& program, const WeightMap& weights, const Tensor& input,
              const ArchConfig& arch, bool with_trace) {
  if (program.arch_id != arch_hash(arch))
    throw ValidationError("arch-mismatch: program was compiled for a different architecture");
  const bool fixed = arch.data_format == DataFormat::Q8_8;
  if ((input.dtype == DType::Q8_8) != fixed)
    throw ValidationError("input dtype does not match the architecture data format");
  for (const auto& [name, t] : weights)
    if ((t.dtype == DType::Q8_8) != fixed)
      throw ValidationError("weight dtype does not match the architecture data format: " + name);
  if (program.layers.empty()) return {input, 0, {}};
  const Shape in_shape = program.layers.front().in_shape;
  if (input.dims.size() != 3 || static_cast<int>(input.dims[0]) != in_shape.c ||
      static_cast<int>(input.dims[1]) != in_shape.h || static_cast<int>(input.dims[2]) != in_shape.w)
    throw ValidationError("shape-mismatch: input does not match program input shape");

  Sim sim{program, weights, arch, fixed, {}, {}, {}};
  sim.outputs[kGraphInput] = input;
  for (const auto& pl : program.layers) sim.layer_by_id[pl.id] = &pl;

  SimResult result;
  for (size_t i = 0; i < program.instructions.size(); ++i) {
    const Instruction& ins = program.instructions[i];
    const ProgramLayer& pl = *sim.layer_by_id.at(ins.layer_id);
    switch (ins.kind) {
      case InstrKind::LoadWeightTile:
        break; // cost only; the weight matrix is addressed directly
      case InstrKind::StreamMatmulTile:
        sim.matmul_tile(ins);
        break;
      case InstrKind::ApplyBiasRelu:
        if (pl.kind == LayerKind::Conv2D)
          sim.writeback(pl, ins);
        else
          sim.relu(pl);
        break;
      case InstrKind::MaxPoolOp:
        sim.maxpool(pl);
        break;
      case InstrKind::AvgPoolOp:
        sim.avgpool(pl);
        break;
      case InstrKind::CopyOp:
        sim.add(pl);
        break;
    }
    const long long cycles = instruction_cost(ins, arch.array_size);
    result.cycles += cycles;
    if (with_trace) {
      uint64_t checksum = 0;
      auto it = sim.outputs.find(ins.layer_id);
      if (it != sim.outputs.end()) checksum = tensor_checksum(it->second);
      result.trace.push_back({i, ins.kind, cycles, checksum});
    }
  }
  result.features = sim.outputs.at(program.layers.back().id);
  return result;
}

std::string trace_csv(const std::vector<TraceEntry>& trace) {
  std::ostringstream os;
  os << "instruction_index,kind,cycles,checksum\n";
  for (const auto& t : trace)
    os << t.instr_index << "," << instr_kind_name(t.kind) << "," << t.cycles << "," << t.checksum
       << "\n";
  return os.str();
}

} // namespace pefsl
