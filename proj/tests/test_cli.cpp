#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "pefsl/fewshot.hpp"
#include "pefsl/numerics.hpp"
#include "pefsl/tensor.hpp"

using namespace pefsl;

namespace {

const std::string cli = PEFSL_CLI_PATH;
const std::string dir = "/tmp/pefsl_cli_test";

int run_cli(const std::string& args) {
  const int rc = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_arch(const std::string& path) {
  std::ofstream os(path);
  os << R"({"array_size":12,"data_format":"q8.8","local_memory_kib":256,)"
     << R"("accumulator_memory_kib":64,"clock_mhz":125})";
}

struct Setup {
  Setup() {
    if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) std::abort();
  }
} setup;

} // namespace

TEST_CASE("build-compile-run chain consumes its own artifacts") {
  write_arch(dir + "/arch.json");
  CHECK(run_cli("build --depth 9 --feature-maps 16 --downsampling strided --resolution 32 -o " +
                dir + "/graph.json --complexity " + dir + "/macs.csv") == 0);
  const std::string graph_json = slurp(dir + "/graph.json");
  CHECK(graph_json.find("\"output_dim\": 64") != std::string::npos);

  CHECK(run_cli("compile --graph " + dir + "/graph.json --arch " + dir + "/arch.json -o " + dir +
                "/program.json --cycles " + dir + "/cycles.csv --folded-weights " + dir +
                "/weights.pefw") == 0);

  // quantize the folded weights and an input tensor, then simulate
  CHECK(run_cli("quantize --input " + dir + "/weights.pefw -o " + dir + "/weights_q.pefw") == 0);
  {
    Tensor input = make_f32({3, 32, 32});
    DeterministicRng rng(1);
    for (auto& v : input.f32) v = static_cast<float>(rng.uniform() - 0.5);
    save_pefw(dir + "/input.pefw", {{"input", input}});
  }
  CHECK(run_cli("quantize --input " + dir + "/input.pefw -o " + dir + "/input_q.pefw") == 0);
  CHECK(run_cli("run --program " + dir + "/program.json --weights " + dir +
                "/weights_q.pefw --input " + dir + "/input_q.pefw --arch " + dir +
                "/arch.json -o " + dir + "/result.json --features " + dir + "/features.pefw") == 0);
  const WeightMap features = load_pefw(dir + "/features.pefw");
  CHECK(features.at("features").element_count() == 64);
}

TEST_CASE("fewshot-eval is byte-identical across runs and thread counts") {
  {
    FeatureSet s;
    s.feature_dim = 8;
    DeterministicRng rng(5);
    for (int c = 0; c < 10; ++c) {
      FeatureClass fc;
      fc.id = c;
      for (int i = 0; i < 25; ++i) {
        std::vector<float> v(8);
        for (auto& x : v) x = static_cast<float>(rng.gaussian());
        fc.vectors.push_back(std::move(v));
      }
      s.classes.push_back(std::move(fc));
    }
    save_peff(dir + "/f.peff", s);
  }
  const std::string flags = " --ways 5 --shots 1 --queries 15 --episodes 500 --seed 7 ";
  CHECK(run_cli("fewshot-eval" + flags + "--threads 1 -o " + dir + "/eval1.json " + dir + "/f.peff") == 0);
  CHECK(run_cli("fewshot-eval" + flags + "--threads 4 -o " + dir + "/eval2.json " + dir + "/f.peff") == 0);
  CHECK(slurp(dir + "/eval1.json") == slurp(dir + "/eval2.json"));
}

TEST_CASE("dse latency-only leaves accuracy columns empty") {
  write_arch(dir + "/arch.json");
  CHECK(run_cli("dse --arch " + dir + "/arch.json --feature-maps 8,16 --latency-only -o " + dir +
                "/sweep.csv") == 0);
  std::istringstream is(slurp(dir + "/sweep.csv"));
  std::string header;
  std::getline(is, header);
  CHECK(header == "depth,feature_maps,downsampling,train_res,test_res,mac_count,cycles,latency_ms,"
                  "accuracy,ci95,error");
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    // accuracy, ci95 and error fields empty
    CHECK(line.substr(line.size() - 3) == ",,,");
  }
  CHECK(rows == 16);
}

TEST_CASE("exit codes") {
  CHECK(run_cli("no-such-subcommand") == 1);
  CHECK(run_cli("build --depth 7 --feature-maps 16 --downsampling strided --resolution 32 -o " +
                dir + "/x.json") == 1);
  CHECK(run_cli("compile --graph " + dir + "/missing.json --arch " + dir + "/arch.json") == 2);
}
