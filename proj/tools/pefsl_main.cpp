#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pefsl/accel_compiler.hpp"
#include "pefsl/accel_sim.hpp"
#include "pefsl/dse.hpp"
#include "pefsl/errors.hpp"
#include "pefsl/fewshot.hpp"
#include "pefsl/nn_ir.hpp"
#include "pefsl/numerics.hpp"

namespace {

using namespace pefsl;

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
  if (!os) throw IoError("write failed: " + path);
}

int env_threads(int cli_value) {
  if (cli_value > 0) return cli_value;
  if (const char* env = std::getenv("PEFSL_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

struct BuildArgs {
  int depth = 9;
  int feature_maps = 16;
  std::string downsampling = "strided";
  int resolution = 32;
  int channels = 3;
  std::string output = "graph.json";
  std::string complexity_csv;
};

void cmd_build(const BuildArgs& a) {
  BackboneSpec spec;
  if (a.depth != 9 && a.depth != 12) throw ValidationError("--depth must be 9 or 12");
  spec.depth = a.depth == 9 ? Depth::ResNet9 : Depth::ResNet12;
  spec.first_feature_maps = a.feature_maps;
  spec.downsampling = downsampling_from_name(a.downsampling);
  spec.input_resolution = a.resolution;
  spec.input_channels = a.channels;
  const Graph g = build_backbone(spec);
  spill(a.output, graph_to_json(g));
  if (!a.complexity_csv.empty()) spill(a.complexity_csv, complexity_csv(complexity(g)));
  std::cout << g.id << ": " << g.nodes.size() << " nodes, output_dim " << g.output_dim << "\n";
}

struct CompileArgs {
  std::string graph, arch, weights, folded_weights;
  std::string output = "program.json";
  std::string cycles_csv;
};

void cmd_compile(const CompileArgs& a) {
  Graph g = graph_from_json(slurp(a.graph));
  const ArchConfig arch = load_arch(a.arch);
  WeightMap w = a.weights.empty() ? identity_weights(g) : load_pefw(a.weights);
  bool has_bn = false;
  for (const auto& n : g.nodes) has_bn = has_bn || n.kind == LayerKind::BatchNorm;
  if (has_bn) g = fold_batchnorm(g, w);
  const Program prog = lower(g, arch);
  spill(a.output, program_to_json(prog));
  const CycleReport report = estimate_cycles(prog, arch);
  if (!a.cycles_csv.empty()) spill(a.cycles_csv, cycle_report_csv(report));
  if (!a.folded_weights.empty()) save_pefw(a.folded_weights, w);
  std::cout << g.id << ": " << prog.instructions.size() << " instructions, "
            << report.total_cycles << " cycles, " << report.latency_ms(arch.clock_mhz)
            << " ms @ " << arch.clock_mhz << " MHz\n";
}

struct RunArgs {
  std::string program, weights, input, arch;
  std::string output = "result.json";
  std::string features_out, trace_csv_path;
};

void cmd_run(const RunArgs& a) {
  const Program prog = program_from_json(slurp(a.program));
  const ArchConfig arch = load_arch(a.arch);
  const WeightMap w = load_pefw(a.weights);
  const WeightMap in_map = load_pefw(a.input);
  auto it = in_map.find("input");
  if (it == in_map.end()) throw ValidationError("input file must contain a tensor named 'input'");
  const SimResult r = run(prog, w, it->second, arch, !a.trace_csv_path.empty());
  nlohmann::json doc = {{"cycles", r.cycles},
                        {"latency_ms", static_cast<double>(r.cycles) / (arch.clock_mhz * 1e3)},
                        {"feature_dim", r.features.element_count()},
                        {"feature_checksum", tensor_checksum(r.features)}};
  spill(a.output, doc.dump(2));
  if (!a.features_out.empty()) save_pefw(a.features_out, {{"features", r.features}});
  if (!a.trace_csv_path.empty()) spill(a.trace_csv_path, trace_csv(r.trace));
  std::cout << "cycles " << r.cycles << ", feature_dim " << r.features.element_count() << "\n";
}

struct QuantizeArgs {
  std::string input, output;
};

void cmd_quantize(const QuantizeArgs& a) {
  save_pefw(a.output, quantize_weights(load_pefw(a.input)));
}

struct FewshotArgs {
  std::string file;
  EpisodeProtocol proto;
  int threads = 0;
  std::string output;
};

void cmd_fewshot(const FewshotArgs& a) {
  const FeatureSet set = load_peff(a.file);
  const EvalResult r = evaluate(set, a.proto, env_threads(a.threads));
  const std::string text = eval_result_json(r, a.proto);
  if (!a.output.empty())
    spill(a.output, text);
  else
    std::cout << text << "\n";
}

struct DseArgs {
  std::string arch;
  std::string depths = "9,12";
  std::string feature_maps = "8,16,32,64";
  std::string downsampling = "strided,maxpool";
  std::string train_res = "32";
  std::string test_res = "32,84";
  std::string accuracy_table;
  bool latency_only = false;
  int threads = 0;
  std::string output = "sweep.csv";
  std::string pareto;
};

void cmd_dse(const DseArgs& a) {
  SweepSpace space;
  space.arch = load_arch(a.arch);
  space.depths = parse_int_list(a.depths);
  space.feature_maps = parse_int_list(a.feature_maps);
  space.downsampling.clear();
  {
    std::istringstream ss(a.downsampling);
    std::string item;
    while (std::getline(ss, item, ',')) space.downsampling.push_back(downsampling_from_name(item));
  }
  space.train_resolutions = parse_int_list(a.train_res);
  space.test_resolutions = parse_int_list(a.test_res);

  AccuracySource src = nullptr;
  if (!a.latency_only && !a.accuracy_table.empty()) src = accuracy_table_from_csv(a.accuracy_table);
  const std::vector<SweepRow> rows = run_sweep(space, src, env_threads(a.threads));
  spill(a.output, sweep_csv(rows));
  if (!a.pareto.empty()) {
    if (!src) throw ValidationError("--pareto needs an accuracy table");
    spill(a.pareto, sweep_csv(pareto_front(rows)));
  }
  std::cout << rows.size() << " configurations written to " << a.output << "\n";
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"PEFSL desk-scale pipeline: backbone IR, systolic-array compilation and "
               "simulation, few-shot evaluation, design-space exploration"};
  app.require_subcommand(1);

  BuildArgs build_args;
  auto* build = app.add_subcommand("build", "Build a backbone graph from hyperparameters");
  build->add_option("--depth", build_args.depth, "9 or 12")->required();
  build->add_option("--feature-maps", build_args.feature_maps)->required();
  build->add_option("--downsampling", build_args.downsampling, "strided|maxpool")->required();
  build->add_option("--resolution", build_args.resolution)->required();
  build->add_option("--channels", build_args.channels);
  build->add_option("--output,-o", build_args.output);
  build->add_option("--complexity", build_args.complexity_csv, "also write a per-layer params/macs CSV");

  CompileArgs compile_args;
  auto* compile = app.add_subcommand("compile", "Lower a graph onto a systolic-array architecture");
  compile->add_option("--graph", compile_args.graph)->required();
  compile->add_option("--arch", compile_args.arch)->required();
  compile->add_option("--weights", compile_args.weights, "float PEFW; identity BN if omitted");
  compile->add_option("--folded-weights", compile_args.folded_weights, "write BN-folded weights");
  compile->add_option("--output,-o", compile_args.output);
  compile->add_option("--cycles", compile_args.cycles_csv, "also write a per-layer cycle CSV");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Simulate a compiled program on an input tensor");
  run_cmd->add_option("--program", run_args.program)->required();
  run_cmd->add_option("--weights", run_args.weights)->required();
  run_cmd->add_option("--input", run_args.input, "PEFW file with a tensor named 'input'")->required();
  run_cmd->add_option("--arch", run_args.arch)->required();
  run_cmd->add_option("--output,-o", run_args.output);
  run_cmd->add_option("--features", run_args.features_out, "write the feature vector as PEFW");
  run_cmd->add_option("--trace", run_args.trace_csv_path, "write the instruction trace CSV");

  QuantizeArgs quant_args;
  auto* quant = app.add_subcommand("quantize", "Convert a float PEFW file to Q8.8");
  quant->add_option("--input", quant_args.input)->required();
  quant->add_option("--output,-o", quant_args.output)->required();

  FewshotArgs fs_args;
  auto* fs = app.add_subcommand("fewshot-eval", "Episodic NCM evaluation of a PEFF feature file");
  fs->add_option("file", fs_args.file, "PEFF feature file")->required();
  fs->add_option("--ways", fs_args.proto.n_way);
  fs->add_option("--shots", fs_args.proto.k_shot);
  fs->add_option("--queries", fs_args.proto.q_queries);
  fs->add_option("--episodes", fs_args.proto.episodes);
  fs->add_option("--seed", fs_args.proto.seed);
  fs->add_option("--threads", fs_args.threads);
  fs->add_option("--output,-o", fs_args.output, "JSON output path (stdout if omitted)");

  DseArgs dse_args;
  auto* dse = app.add_subcommand("dse", "Sweep the hyperparameter space");
  dse->add_option("--arch", dse_args.arch)->required();
  dse->add_option("--depths", dse_args.depths);
  dse->add_option("--feature-maps", dse_args.feature_maps);
  dse->add_option("--downsampling", dse_args.downsampling);
  dse->add_option("--train-res", dse_args.train_res);
  dse->add_option("--test-res", dse_args.test_res);
  dse->add_option("--accuracy-table", dse_args.accuracy_table);
  dse->add_flag("--latency-only", dse_args.latency_only, "skip the accuracy join");
  dse->add_option("--threads", dse_args.threads);
  dse->add_option("--output,-o", dse_args.output);
  dse->add_option("--pareto", dse_args.pareto, "also write the Pareto front CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*build) cmd_build(build_args);
    if (*compile) cmd_compile(compile_args);
    if (*run_cmd) cmd_run(run_args);
    if (*quant) cmd_quantize(quant_args);
    if (*fs) cmd_fewshot(fs_args);
    if (*dse) cmd_dse(dse_args);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
