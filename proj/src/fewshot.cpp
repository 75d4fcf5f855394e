#include "pefsl/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "pefsl/errors.hpp"

namespace pefsl {

uint64_t DeterministicRng::next() {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t DeterministicRng::bounded(uint64_t n) {
  // Lemire multiply-shift; bias is < 2^-64 per draw, irrelevant at desk scale
  return static_cast<uint64_t>((static_cast<__uint128_t>(next()) * n) >> 64);
}

double DeterministicRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double DeterministicRng::gaussian() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

DeterministicRng episode_rng(uint64_t seed, uint64_t episode_index) {
  // decorrelate the two words before seeding the stream
  uint64_t s = seed * 0xd1342543de82ef95ull + episode_index;
  s ^= s >> 33;
  s *= 0xff51afd7ed558ccdull;
  s ^= s >> 33;
  return DeterministicRng(s);
}

namespace {

constexpr char kMagic[4] = {'P', 'E', 'F', 'F'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw IoError("peff: truncated file");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

} // namespace

void save_peff(const std::string& path, const FeatureSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("peff: cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(set.feature_dim));
  write_le<uint32_t>(os, static_cast<uint32_t>(set.classes.size()));
  for (const auto& c : set.classes) {
    write_le<uint32_t>(os, static_cast<uint32_t>(c.id));
    write_le<uint32_t>(os, static_cast<uint32_t>(c.vectors.size()));
    for (const auto& v : c.vectors)
      for (float x : v) {
        uint32_t bits;
        std::memcpy(&bits, &x, 4);
        write_le<uint32_t>(os, bits);
      }
  }
  if (!os) throw IoError("peff: write failed: " + path);
}

FeatureSet load_peff(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("peff: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("peff: bad magic");
  const uint32_t version = read_le<uint32_t>(is);
  if (version != kVersion) throw IoError("peff: unsupported version " + std::to_string(version));
  FeatureSet set;
  set.feature_dim = static_cast<int>(read_le<uint32_t>(is));
  const uint32_t n_classes = read_le<uint32_t>(is);
  for (uint32_t i = 0; i < n_classes; ++i) {
    FeatureClass c;
    c.id = static_cast<int>(read_le<uint32_t>(is));
    const uint32_t n_vec = read_le<uint32_t>(is);
    c.vectors.reserve(n_vec);
    for (uint32_t j = 0; j < n_vec; ++j) {
      std::vector<float> v(static_cast<size_t>(set.feature_dim));
      for (auto& x : v) {
        const uint32_t bits = read_le<uint32_t>(is);
        std::memcpy(&x, &bits, 4);
      }
      c.vectors.push_back(std::move(v));
    }
    set.classes.push_back(std::move(c));
  }
  std::sort(set.classes.begin(), set.classes.end(),
            [](const FeatureClass& a, const FeatureClass& b) { return a.id < b.id; });
  validate(set);
  return set;
}

void validate(const FeatureSet& set) {
  if (set.feature_dim <= 0) throw ValidationError("feature set: feature_dim must be positive");
  std::vector<int> ids;
  for (const auto& c : set.classes) {
    if (c.vectors.empty())
      throw ValidationError("feature set: empty class " + std::to_string(c.id));
    for (const auto& v : c.vectors)
      if (static_cast<int>(v.size()) != set.feature_dim)
        throw ValidationError("dimension-inconsistency in class " + std::to_string(c.id));
    ids.push_back(c.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ValidationError("feature set: duplicate class id");
}

void validate(const EpisodeProtocol& proto, const FeatureSet& set) {
  if (proto.n_way <= 0 || proto.k_shot <= 0 || proto.q_queries <= 0 || proto.episodes <= 0)
    throw ValidationError("protocol: counts must be positive");
  if (proto.n_way > static_cast<int>(set.classes.size()))
    throw ValidationError("protocol infeasible: n_way exceeds class count");
  size_t min_pop = std::numeric_limits<size_t>::max();
  for (const auto& c : set.classes) min_pop = std::min(min_pop, c.vectors.size());
  if (static_cast<size_t>(proto.k_shot) + proto.q_queries > min_pop)
    throw ValidationError("protocol infeasible: k_shot + q_queries exceeds class population");
}

namespace {

// first `take` entries of a Fisher-Yates pass over [0, n)
std::vector<size_t> sample_without_replacement(DeterministicRng& rng, size_t n, size_t take) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = 0; i < take; ++i) {
    const size_t j = i + static_cast<size_t>(rng.bounded(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

} // namespace

Episode sample_episode(const FeatureSet& set, const EpisodeProtocol& proto,
                       uint64_t episode_index) {
  validate(proto, set);
  DeterministicRng rng = episode_rng(proto.seed, episode_index);
  const std::vector<size_t> class_pick =
      sample_without_replacement(rng, set.classes.size(), static_cast<size_t>(proto.n_way));
  Episode ep;
  for (size_t ci : class_pick) {
    const FeatureClass& cls = set.classes[ci];
    const std::vector<size_t> vec_pick = sample_without_replacement(
        rng, cls.vectors.size(), static_cast<size_t>(proto.k_shot + proto.q_queries));
    for (int i = 0; i < proto.k_shot; ++i)
      ep.support.push_back({cls.id, &cls.vectors[vec_pick[i]]});
    for (int i = proto.k_shot; i < proto.k_shot + proto.q_queries; ++i)
      ep.queries.push_back({cls.id, &cls.vectors[vec_pick[i]]});
  }
  return ep;
}

namespace {

std::vector<double> l2_normalized(const std::vector<float>& v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ValidationError("ncm: zero-norm feature vector");
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

} // namespace

NcmResult ncm_classify(const Episode& episode) {
  if (episode.support.empty()) throw ValidationError("ncm: empty support set");
  // prototypes keyed by class id, ascending for the tie rule
  std::vector<int> class_ids;
  for (const auto& e : episode.support) class_ids.push_back(e.class_id);
  std::sort(class_ids.begin(), class_ids.end());
  class_ids.erase(std::unique(class_ids.begin(), class_ids.end()), class_ids.end());

  const size_t dim = episode.support.front().features->size();
  std::vector<std::vector<double>> prototypes(class_ids.size(), std::vector<double>(dim, 0.0));
  std::vector<int> counts(class_ids.size(), 0);
  for (const auto& e : episode.support) {
    const size_t ci = static_cast<size_t>(
        std::lower_bound(class_ids.begin(), class_ids.end(), e.class_id) - class_ids.begin());
    const std::vector<double> v = l2_normalized(*e.features);
    for (size_t d = 0; d < dim; ++d) prototypes[ci][d] += v[d];
    ++counts[ci];
  }
  for (size_t ci = 0; ci < prototypes.size(); ++ci)
    for (double& x : prototypes[ci]) x /= counts[ci];

  NcmResult r;
  int correct = 0;
  for (const auto& q : episode.queries) {
    const std::vector<double> v = l2_normalized(*q.features);
    double best = std::numeric_limits<double>::infinity();
    int best_class = -1;
    for (size_t ci = 0; ci < prototypes.size(); ++ci) {
      double d2 = 0.0;
      for (size_t d = 0; d < dim; ++d) {
        const double diff = v[d] - prototypes[ci][d];
        d2 += diff * diff;
      }
      if (d2 < best) { // strict: ties keep the lower class id
        best = d2;
        best_class = class_ids[ci];
      }
    }
    r.predictions.push_back(best_class);
    if (best_class == q.class_id) ++correct;
  }
  r.accuracy = episode.queries.empty() ? 0.0 : static_cast<double>(correct) / episode.queries.size();
  return r;
}

EvalResult evaluate(const FeatureSet& set, const EpisodeProtocol& proto, int threads) {
  validate(proto, set);
  if (threads < 1) threads = 1;
  std::vector<double> acc(static_cast<size_t>(proto.episodes), 0.0);
  auto worker = [&](int t) {
    for (int i = t; i < proto.episodes; i += threads)
      acc[static_cast<size_t>(i)] =
          ncm_classify(sample_episode(set, proto, static_cast<uint64_t>(i))).accuracy;
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  // reduce in episode order so the result is independent of thread count
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= proto.episodes;
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  const double stddev = proto.episodes > 1 ? std::sqrt(var / (proto.episodes - 1)) : 0.0;
  EvalResult r;
  r.mean_accuracy = mean;
  r.ci95_halfwidth = 1.96 * stddev / std::sqrt(static_cast<double>(proto.episodes));
  r.episodes = proto.episodes;
  return r;
}

std::string eval_result_json(const EvalResult& r, const EpisodeProtocol& proto) {
  nlohmann::json doc = {{"mean_accuracy", r.mean_accuracy},
                        {"ci95_halfwidth", r.ci95_halfwidth},
                        {"episodes", r.episodes},
                        {"n_way", proto.n_way},
                        {"k_shot", proto.k_shot},
                        {"q_queries", proto.q_queries},
                        {"seed", proto.seed}};
  return doc.dump(2);
}

} // namespace pefsl
