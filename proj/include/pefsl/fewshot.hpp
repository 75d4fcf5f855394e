#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pefsl {

enum class SplitTag { Base, Validation, Novel };

struct FeatureClass {
  int id = 0;
  std::vector<std::vector<float>> vectors;
};

struct FeatureSet {
  int feature_dim = 0;
  std::vector<FeatureClass> classes; // sorted by class id, ids unique
  SplitTag split = SplitTag::Novel;
};

struct EpisodeProtocol {
  int n_way = 5;
  int k_shot = 1;
  int q_queries = 15;
  int episodes = 10000;
  uint64_t seed = 0;
};

struct Example {
  int class_id = 0;
  const std::vector<float>* features = nullptr;
};

struct Episode {
  std::vector<Example> support; // n_way * k_shot
  std::vector<Example> queries; // n_way * q_queries
};

struct NcmResult {
  std::vector<int> predictions; // per query
  double accuracy = 0.0;
};

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  int episodes = 0;
};

// Counter-based deterministic generator (splitmix64 core), identical output
// on every platform.
struct DeterministicRng {
  uint64_t state = 0;
  explicit DeterministicRng(uint64_t seed) : state(seed) {}
  uint64_t next();
  uint64_t bounded(uint64_t n); // uniform in [0, n)
  double uniform();             // [0, 1)
  double gaussian();            // standard normal (Box-Muller)
};

DeterministicRng episode_rng(uint64_t seed, uint64_t episode_index);

// "PEFF" feature container: magic, u32 version=1, u32 feature_dim,
// u32 class count; per class: u32 class id, u32 vector count, raw float32.
void save_peff(const std::string& path, const FeatureSet& set);
FeatureSet load_peff(const std::string& path);

void validate(const FeatureSet& set);
void validate(const EpisodeProtocol& proto, const FeatureSet& set);

// Deterministic in (seed, episode_index): n_way classes without replacement,
// then k_shot + q_queries vectors per class; first k_shot become support.
Episode sample_episode(const FeatureSet& set, const EpisodeProtocol& proto,
                       uint64_t episode_index);

// L2-normalize, prototype = mean of normalized supports, assign nearest
// prototype by Euclidean distance, ties to the lowest class id.
NcmResult ncm_classify(const Episode& episode);

EvalResult evaluate(const FeatureSet& set, const EpisodeProtocol& proto, int threads = 1);

std::string eval_result_json(const EvalResult& r, const EpisodeProtocol& proto);

} // namespace pefsl
