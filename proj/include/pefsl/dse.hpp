#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pefsl/accel_compiler.hpp"
#include "pefsl/nn_ir.hpp"

namespace pefsl {

struct SweepSpace {
  std::vector<int> depths = {9, 12};
  std::vector<int> feature_maps = {8, 16, 32, 64};
  std::vector<Downsampling> downsampling = {Downsampling::Strided, Downsampling::MaxPool};
  std::vector<int> train_resolutions = {32}; // metadata tag, accuracy join only
  std::vector<int> test_resolutions = {32, 84};
  ArchConfig arch;
  size_t cap = 4096;
};

struct SweepConfig {
  int depth = 9;
  int feature_maps = 16;
  Downsampling downsampling = Downsampling::Strided;
  int train_res = 32;
  int test_res = 32;

  BackboneSpec backbone() const;
  bool operator==(const SweepConfig&) const = default;
};

struct SweepRow {
  SweepConfig config;
  long long mac_count = 0;
  long long cycles = 0;
  double latency_ms = 0.0;
  std::optional<double> accuracy;
  std::optional<double> ci95;
  std::string error; // per-config failure, recorded instead of aborting
};

struct AccuracyEntry {
  double accuracy = 0.0;
  double ci95 = 0.0;
};

using AccuracySource = std::function<std::optional<AccuracyEntry>(const SweepConfig&)>;

// Full cross product in lexicographic axis order
// (depth, feature_maps, downsampling, train_res, test_res).
std::vector<SweepConfig> enumerate_configs(const SweepSpace& space);

// Per config: build -> fold -> lower -> estimate_cycles, optional accuracy
// join; rows sorted by latency (config order breaks ties).
std::vector<SweepRow> run_sweep(const SweepSpace& space, const AccuracySource& accuracy = nullptr,
                                int threads = 1);

// Non-dominated set under (minimize latency, maximize accuracy), ordered by
// latency; first-seen representative kept among duplicates.
std::vector<SweepRow> pareto_front(const std::vector<SweepRow>& rows);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Accuracy table CSV keyed on the five config axes:
// depth,feature_maps,downsampling,train_res,test_res,accuracy,ci95
AccuracySource accuracy_table_from_csv(const std::string& path);

const char* downsampling_name(Downsampling d);
Downsampling downsampling_from_name(const std::string& s);

} // namespace pefsl
