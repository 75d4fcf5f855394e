#include "pefsl/dse.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>
#include <tuple>

#include "pefsl/errors.hpp"

namespace pefsl {

const char* downsampling_name(Downsampling d) {
  return d == Downsampling::Strided ? "strided" : "maxpool";
}

Downsampling downsampling_from_name(const std::string& s) {
  if (s == "strided") return Downsampling::Strided;
  if (s == "maxpool") return Downsampling::MaxPool;
  throw ValidationError("unknown downsampling mode: " + s);
}

BackboneSpec SweepConfig::backbone() const {
  BackboneSpec spec;
  spec.depth = depth == 9 ? Depth::ResNet9 : Depth::ResNet12;
  spec.first_feature_maps = feature_maps;
  spec.downsampling = downsampling;
  spec.input_resolution = test_res;
  return spec;
}

std::vector<SweepConfig> enumerate_configs(const SweepSpace& space) {
  if (space.depths.empty() || space.feature_maps.empty() || space.downsampling.empty() ||
      space.train_resolutions.empty() || space.test_resolutions.empty())
    throw ValidationError("sweep space: every axis must be non-empty");
  for (int d : space.depths)
    if (d != 9 && d != 12) throw ValidationError("sweep space: depth must be 9 or 12");
  const size_t total = space.depths.size() * space.feature_maps.size() *
                       space.downsampling.size() * space.train_resolutions.size() *
                       space.test_resolutions.size();
  if (total > space.cap)
    throw ValidationError("sweep space: cross product " + std::to_string(total) +
                          " exceeds cap " + std::to_string(space.cap));
  std::vector<SweepConfig> out;
  out.reserve(total);
  for (int d : space.depths)
    for (int fm : space.feature_maps)
      for (Downsampling ds : space.downsampling)
        for (int tr : space.train_resolutions)
          for (int te : space.test_resolutions) out.push_back({d, fm, ds, tr, te});
  return out;
}

std::vector<SweepRow> run_sweep(const SweepSpace& space, const AccuracySource& accuracy,
                                int threads) {
  const std::vector<SweepConfig> configs = enumerate_configs(space);
  std::vector<SweepRow> rows(configs.size());
  if (threads < 1) threads = 1;

  auto eval_one = [&](size_t i) {
    SweepRow& row = rows[i];
    row.config = configs[i];
    try {
      Graph g = build_backbone(configs[i].backbone());
      WeightMap w = identity_weights(g);
      Graph folded = fold_batchnorm(g, w);
      row.mac_count = complexity(folded).mac_count;
      const Program prog = lower(folded, space.arch);
      const CycleReport cycles = estimate_cycles(prog, space.arch);
      row.cycles = cycles.total_cycles;
      row.latency_ms = cycles.latency_ms(space.arch.clock_mhz);
      if (accuracy) {
        if (auto e = accuracy(configs[i])) {
          row.accuracy = e->accuracy;
          row.ci95 = e->ci95;
        }
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  if (threads == 1) {
    for (size_t i = 0; i < configs.size(); ++i) eval_one(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (size_t i = static_cast<size_t>(t); i < configs.size(); i += threads) eval_one(i);
      });
    for (auto& th : pool) th.join();
  }

  // stable sort keeps enumeration order among equal latencies, so the output
  // does not depend on thread count
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.latency_ms < b.latency_ms; });
  return rows;
}

std::vector<SweepRow> pareto_front(const std::vector<SweepRow>& rows) {
  for (const auto& r : rows)
    if (!r.accuracy && r.error.empty())
      throw ValidationError("pareto_front: row without accuracy");
  std::vector<SweepRow> front;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].accuracy) continue;
    bool dominated = false;
    for (size_t j = 0; j < rows.size() && !dominated; ++j) {
      if (i == j || !rows[j].accuracy) continue;
      const bool no_worse = rows[j].latency_ms <= rows[i].latency_ms &&
                            *rows[j].accuracy >= *rows[i].accuracy;
      const bool strictly_better = rows[j].latency_ms < rows[i].latency_ms ||
                                   *rows[j].accuracy > *rows[i].accuracy;
      if (no_worse && strictly_better) dominated = true;
      // duplicates: keep only the first occurrence
      if (j < i && rows[j].latency_ms == rows[i].latency_ms &&
          *rows[j].accuracy == *rows[i].accuracy)
        dominated = true;
    }
    if (!dominated) front.push_back(rows[i]);
  }
  std::stable_sort(front.begin(), front.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.latency_ms < b.latency_ms; });
  return front;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "depth,feature_maps,downsampling,train_res,test_res,mac_count,cycles,latency_ms,accuracy,"
        "ci95,error\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows) {
    os << r.config.depth << "," << r.config.feature_maps << ","
       << downsampling_name(r.config.downsampling) << "," << r.config.train_res << ","
       << r.config.test_res << ",";
    if (r.error.empty()) {
      os << r.mac_count << "," << r.cycles << "," << r.latency_ms << ",";
      if (r.accuracy) os << *r.accuracy;
      os << ",";
      if (r.ci95) os << *r.ci95;
      os << ",";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      os << ",,,,," << msg;
    }
    os << "\n";
  }
  return os.str();
}

AccuracySource accuracy_table_from_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open accuracy table: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("accuracy table: empty file");
  auto table = std::make_shared<std::map<std::tuple<int, int, std::string, int, int>, AccuracyEntry>>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() < 7) throw ValidationError("accuracy table: expected 7 columns, got line '" + line + "'");
    try {
      (*table)[{std::stoi(fields[0]), std::stoi(fields[1]), fields[2], std::stoi(fields[3]),
                std::stoi(fields[4])}] = {std::stod(fields[5]), std::stod(fields[6])};
    } catch (const std::exception&) {
      throw ValidationError("accuracy table: bad row '" + line + "'");
    }
  }
  return [table](const SweepConfig& c) -> std::optional<AccuracyEntry> {
    auto it = table->find(
        {c.depth, c.feature_maps, downsampling_name(c.downsampling), c.train_res, c.test_res});
    if (it == table->end()) return std::nullopt;
    return it->second;
  };
}

} // namespace pefsl
