#include "pefsl/accel_compiler.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pefsl/errors.hpp"

namespace pefsl {

using nlohmann::json;

const char* instr_kind_name(InstrKind k) {
  switch (k) {
    case InstrKind::LoadWeightTile: return "LoadWeightTile";
    case InstrKind::StreamMatmulTile: return "StreamMatmulTile";
    case InstrKind::ApplyBiasRelu: return "ApplyBiasRelu";
    case InstrKind::MaxPoolOp: return "MaxPoolOp";
    case InstrKind::AvgPoolOp: return "AvgPoolOp";
    case InstrKind::CopyOp: return "CopyOp";
  }
  return "?";
}

static InstrKind instr_kind_from_name(const std::string& s) {
  static const std::map<std::string, InstrKind> m = {
      {"LoadWeightTile", InstrKind::LoadWeightTile},
      {"StreamMatmulTile", InstrKind::StreamMatmulTile},
      {"ApplyBiasRelu", InstrKind::ApplyBiasRelu},
      {"MaxPoolOp", InstrKind::MaxPoolOp},
      {"AvgPoolOp", InstrKind::AvgPoolOp},
      {"CopyOp", InstrKind::CopyOp}};
  auto it = m.find(s);
  if (it == m.end()) throw ValidationError("unknown instruction kind: " + s);
  return it->second;
}

ArchConfig parse_arch(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("arch json: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("arch json: expected an object");
  static const char* kFields[] = {"array_size", "data_format", "local_memory_kib",
                                  "accumulator_memory_kib", "clock_mhz"};
  for (const auto& [key, _] : doc.items()) {
    bool known = false;
    for (const char* f : kFields) known = known || key == f;
    if (!known) throw ValidationError("arch json: unknown field '" + key + "'");
  }
  for (const char* f : kFields)
    if (!doc.contains(f)) throw ValidationError(std::string("arch json: missing field '") + f + "'");

  ArchConfig a;
  a.array_size = doc.at("array_size");
  a.local_memory_kib = doc.at("local_memory_kib");
  a.accumulator_memory_kib = doc.at("accumulator_memory_kib");
  a.clock_mhz = doc.at("clock_mhz");
  const std::string fmt = doc.at("data_format");
  if (fmt == "q8.8")
    a.data_format = DataFormat::Q8_8;
  else if (fmt == "float32")
    a.data_format = DataFormat::Float32;
  else
    throw ValidationError("arch json: unknown data_format '" + fmt + "'");
  if (a.array_size <= 0 || a.local_memory_kib <= 0 || a.accumulator_memory_kib <= 0 ||
      a.clock_mhz <= 0)
    throw ValidationError("arch json: all sizes and the clock must be positive");
  return a;
}

ArchConfig load_arch(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open arch file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_arch(ss.str());
}

std::string arch_to_json(const ArchConfig& a) {
  json doc = {{"array_size", a.array_size},
              {"data_format", a.data_format == DataFormat::Q8_8 ? "q8.8" : "float32"},
              {"local_memory_kib", a.local_memory_kib},
              {"accumulator_memory_kib", a.accumulator_memory_kib},
              {"clock_mhz", a.clock_mhz}};
  return doc.dump(2);
}

uint64_t arch_hash(const ArchConfig& a) {
  const std::string canon = arch_to_json(a);
  return fnv1a64(canon.data(), canon.size());
}

long long instruction_cost(const Instruction& ins, int array_size) {
  const long long A = array_size;
  switch (ins.kind) {
    case InstrKind::LoadWeightTile:
      return A;
    case InstrKind::StreamMatmulTile:
      return ins.m + 2 * (A - 1);
    default:
      return (ins.elements + A - 1) / A;
  }
}

namespace {

long long ceil_ll(long long a, long long b) { return (a + b - 1) / b; }

} // namespace

Program lower(const Graph& graph, const ArchConfig& arch) {
  if (!graph.shapes_inferred) throw ValidationError("lower requires a shape-inferred graph");
  const int A = arch.array_size;
  const int elem_bytes = arch.data_format == DataFormat::Q8_8 ? 2 : 4;
  // One weight tile + one activation tile resident in local memory, one
  // accumulator tile in accumulator memory.
  const long long tile_bytes = 1ll * A * A * elem_bytes;
  if (2 * tile_bytes > 1024ll * arch.local_memory_kib)
    throw ValidationError("memory-infeasible: one " + std::to_string(A) + "x" + std::to_string(A) +
                          " tile pair exceeds local memory");
  if (1ll * A * A * 4 > 1024ll * arch.accumulator_memory_kib)
    throw ValidationError("memory-infeasible: accumulator tile exceeds accumulator memory");

  Program p;
  p.graph_id = graph.id;
  p.arch_id = arch_hash(arch);

  std::map<int, Shape> shapes;
  shapes[kGraphInput] = graph.input_shape;
  for (const auto& n : graph.nodes) {
    ProgramLayer pl;
    pl.id = n.id;
    pl.kind = n.kind;
    pl.inputs = n.inputs;
    pl.in_shape = shapes.at(n.inputs.at(0));
    pl.out_shape = n.out_shape;
    pl.kernel = n.kernel;
    pl.stride = n.stride;
    pl.in_channels = n.in_channels;
    pl.out_channels = n.out_channels;
    pl.weight_name = n.weight_name;
    pl.bias_name = n.bias_name;
    shapes[n.id] = n.out_shape;

    auto push = [&](Instruction ins) {
      ins.layer_id = n.id;
      ins.cycles = instruction_cost(ins, A);
      p.instructions.push_back(ins);
    };

    switch (n.kind) {
      case LayerKind::BatchNorm:
        throw ValidationError("unsupported-layer: BatchNorm (fold before lowering)");
      case LayerKind::Conv2D: {
        const long long M = 1ll * n.out_shape.h * n.out_shape.w;
        const long long K = 1ll * n.in_channels * n.kernel * n.kernel;
        const long long N = n.out_channels;
        TilePlan plan{n.id, M, K, N, ceil_ll(M, A), ceil_ll(K, A), ceil_ll(N, A)};
        p.tile_plans.push_back(plan);
        for (long long nt = 0; nt < plan.col_tiles; ++nt)
          for (long long kt = 0; kt < plan.depth_tiles; ++kt)
            for (long long mt = 0; mt < plan.row_tiles; ++mt) {
              Instruction load;
              load.kind = InstrKind::LoadWeightTile;
              load.k = static_cast<int>(std::min<long long>(A, K - kt * A));
              load.n = static_cast<int>(std::min<long long>(A, N - nt * A));
              load.k_off = kt * A;
              load.n_off = nt * A;
              push(load);
              Instruction mm;
              mm.kind = InstrKind::StreamMatmulTile;
              mm.m = static_cast<int>(std::min<long long>(A, M - mt * A));
              mm.k = load.k;
              mm.n = load.n;
              mm.m_off = mt * A;
              mm.k_off = load.k_off;
              mm.n_off = load.n_off;
              push(mm);
            }
        Instruction bias;
        bias.kind = InstrKind::ApplyBiasRelu;
        bias.elements = n.out_shape.elems();
        bias.with_bias = !n.bias_name.empty();
        push(bias);
        break;
      }
      case LayerKind::ReLU: {
        Instruction ins;
        ins.kind = InstrKind::ApplyBiasRelu;
        ins.with_relu = true;
        ins.elements = n.out_shape.elems();
        push(ins);
        break;
      }
      case LayerKind::MaxPool2x2: {
        Instruction ins;
        ins.kind = InstrKind::MaxPoolOp;
        ins.elements = pl.in_shape.elems();
        push(ins);
        break;
      }
      case LayerKind::Add: {
        Instruction ins;
        ins.kind = InstrKind::CopyOp;
        ins.elements = n.out_shape.elems();
        push(ins);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        Instruction ins;
        ins.kind = InstrKind::AvgPoolOp;
        ins.elements = pl.in_shape.elems();
        push(ins);
        break;
      }
    }
    p.layers.push_back(std::move(pl));
  }
  return p;
}

CycleReport estimate_cycles(const Program& program, const ArchConfig& arch) {
  if (program.arch_id != arch_hash(arch))
    throw ValidationError("arch-mismatch: program was compiled for a different architecture");
  CycleReport r;
  std::map<int, long long> per_layer;
  for (const auto& ins : program.instructions)
    per_layer[ins.layer_id] += instruction_cost(ins, arch.array_size);
  for (const auto& pl : program.layers) {
    LayerCycles lc{pl.id, pl.kind, per_layer.count(pl.id) ? per_layer.at(pl.id) : 0};
    r.per_layer.push_back(lc);
    r.total_cycles += lc.cycles;
  }
  return r;
}

std::string program_to_json(const Program& p) {
  json layers = json::array();
  for (const auto& pl : p.layers) {
    layers.push_back({{"id", pl.id},
                      {"kind", layer_kind_name(pl.kind)},
                      {"inputs", pl.inputs},
                      {"in_shape", {pl.in_shape.c, pl.in_shape.h, pl.in_shape.w}},
                      {"out_shape", {pl.out_shape.c, pl.out_shape.h, pl.out_shape.w}},
                      {"kernel", pl.kernel},
                      {"stride", pl.stride},
                      {"in_channels", pl.in_channels},
                      {"out_channels", pl.out_channels},
                      {"weight", pl.weight_name},
                      {"bias", pl.bias_name}});
  }
  json instrs = json::array();
  for (const auto& i : p.instructions) {
    instrs.push_back({{"kind", instr_kind_name(i.kind)},
                      {"layer", i.layer_id},
                      {"m", i.m},
                      {"k", i.k},
                      {"n", i.n},
                      {"m_off", i.m_off},
                      {"k_off", i.k_off},
                      {"n_off", i.n_off},
                      {"elements", i.elements},
                      {"bias", i.with_bias},
                      {"relu", i.with_relu},
                      {"cycles", i.cycles}});
  }
  json plans = json::array();
  for (const auto& t : p.tile_plans)
    plans.push_back({{"layer", t.layer_id},
                     {"M", t.rows},
                     {"K", t.depth},
                     {"N", t.cols},
                     {"m_tiles", t.row_tiles},
                     {"k_tiles", t.depth_tiles},
                     {"n_tiles", t.col_tiles}});
  json doc = {{"format", "pefsl-program"}, {"version", 1},     {"graph_id", p.graph_id},
              {"arch_id", p.arch_id},      {"layers", layers}, {"instructions", instrs},
              {"tile_plans", plans}};
  return doc.dump(2);
}

Program program_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("program json: ") + e.what());
  }
  if (doc.value("format", "") != "pefsl-program" || doc.value("version", 0) != 1)
    throw ValidationError("program json: unknown format/version");
  Program p;
  p.graph_id = doc.value("graph_id", "");
  p.arch_id = doc.at("arch_id");
  for (const auto& j : doc.at("layers")) {
    ProgramLayer pl;
    pl.id = j.at("id");
    pl.kind = [&] {
      const std::string k = j.at("kind");
      for (LayerKind lk : {LayerKind::Conv2D, LayerKind::BatchNorm, LayerKind::ReLU,
                           LayerKind::MaxPool2x2, LayerKind::Add, LayerKind::GlobalAvgPool})
        if (k == layer_kind_name(lk)) return lk;
      throw ValidationError("program json: unknown layer kind " + k);
    }();
    pl.inputs = j.at("inputs").get<std::vector<int>>();
    auto s = j.at("in_shape");
    pl.in_shape = {s.at(0), s.at(1), s.at(2)};
    auto o = j.at("out_shape");
    pl.out_shape = {o.at(0), o.at(1), o.at(2)};
    pl.kernel = j.at("kernel");
    pl.stride = j.at("stride");
    pl.in_channels = j.at("in_channels");
    pl.out_channels = j.at("out_channels");
    pl.weight_name = j.at("weight");
    pl.bias_name = j.at("bias");
    p.layers.push_back(std::move(pl));
  }
  for (const auto& j : doc.at("instructions")) {
    Instruction i;
    i.kind = instr_kind_from_name(j.at("kind"));
    i.layer_id = j.at("layer");
    i.m = j.at("m");
    i.k = j.at("k");
    i.n = j.at("n");
    i.m_off = j.at("m_off");
    i.k_off = j.at("k_off");
    i.n_off = j.at("n_off");
    i.elements = j.at("elements");
    i.with_bias = j.at("bias");
    i.with_relu = j.at("relu");
    i.cycles = j.at("cycles");
    p.instructions.push_back(i);
  }
  for (const auto& j : doc.at("tile_plans")) {
    TilePlan t;
    t.layer_id = j.at("layer");
    t.rows = j.at("M");
    t.depth = j.at("K");
    t.cols = j.at("N");
    t.row_tiles = j.at("m_tiles");
    t.depth_tiles = j.at("k_tiles");
    t.col_tiles = j.at("n_tiles");
    p.tile_plans.push_back(t);
  }
  return p;
}

std::string cycle_report_csv(const CycleReport& report) {
  std::ostringstream os;
  os << "layer_id,layer_kind,cycles\n";
  for (const auto& lc : report.per_layer)
    os << lc.layer_id << "," << layer_kind_name(lc.kind) << "," << lc.cycles << "\n";
  os << "total,," << report.total_cycles << "\n";
  return os.str();
}

} // namespace pefsl
