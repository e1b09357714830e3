#include "cfa/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>
#include <utility>

#include "cfa/errors.hpp"
#include "cfa/evaluation.hpp"
#include "cfa/models.hpp"
#include "cfa/rng.hpp"
#include "cfa/training.hpp"

namespace cfa {

namespace {

namespace fs = std::filesystem;

// Seed streams: a run's data and parameters depend only on its identity,
// never on scheduling order or on other runs.
constexpr uint64_t kSourceData = 0xA1;
constexpr uint64_t kTargetData = 0xA2;
constexpr uint64_t kModelInit = 0xA3;
constexpr uint64_t kTrainStream = 0xA4;

uint64_t chain(uint64_t master, uint64_t a, uint64_t b, uint64_t c) {
  return derive_seed(derive_seed(derive_seed(master, a), b), c);
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

const GridSpec& grid_spec(const ExperimentConfig& cfg) {
  if (!cfg.grid) throw ConfigError("the grid command needs a grid section");
  if (cfg.out_dir.empty()) throw ConfigError("the grid command needs out_dir");
  return *cfg.grid;
}

std::string dataset_label(const DataConfig& d, size_t index) {
  if (!d.synthetic) {
    const auto stem = fs::path(d.path).stem().string();
    if (!stem.empty()) return stem;
  }
  return "synth" + std::to_string(index);
}

std::vector<std::pair<int, int>> ordered_range_pairs(size_t n_ranges) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < static_cast<int>(n_ranges); ++i)
    for (int j = 0; j < static_cast<int>(n_ranges); ++j)
      if (i != j) pairs.emplace_back(i, j);
  return pairs;
}

// The synthetic grid stamps each range onto the experiment's data section,
// which supplies everything except the period bounds.
const DataConfig& synthetic_base(const ExperimentConfig& cfg) {
  if (cfg.sources.size() != 1 || !cfg.sources[0].synthetic)
    throw ConfigError(
        "a synthetic grid needs one synthetic data section as the template");
  return cfg.sources[0];
}

DataConfig with_range(DataConfig base, const RangeSpec& r) {
  base.synth.p_min = r.lo;
  base.synth.p_max = r.hi;
  return base;
}

struct RunOutcome {
  GridRunResult result;
  bool reused = false;
};

fs::path run_file(const ExperimentConfig& cfg, const GridRun& run) {
  return fs::path(cfg.out_dir) / "runs" / (run.id + ".json");
}

nlohmann::json result_json(const GridRun& run, const GridRunResult& r) {
  nlohmann::json j{{"id", run.id},         {"source", run.source},
                   {"target", run.target}, {"model", run.model},
                   {"seed_index", run.seed_index}, {"status", r.status}};
  if (r.status == "ok") {
    j["mse_scaled"] = r.mse_scaled;
    j["nd"] = r.nd_defined ? nlohmann::json(r.nd) : nlohmann::json();
  } else {
    j["error"] = r.error;
  }
  return j;
}

bool load_finished_result(const fs::path& path, GridRunResult& out) {
  std::ifstream in(path);
  if (!in) return false;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (j.value("status", "") != "ok" || !j.contains("mse_scaled")) return false;
  out.status = "ok";
  out.mse_scaled = j["mse_scaled"].get<double>();
  if (j.contains("nd") && j["nd"].is_number()) {
    out.nd = j["nd"].get<double>();
    out.nd_defined = true;
  }
  return true;
}

GridRunResult execute_run(const ExperimentConfig& cfg, const GridRun& run) {
  const auto& spec = *cfg.grid;
  GridRunResult res;
  res.id = run.id;

  std::vector<DatasetSplit> sources;
  DatasetSplit target;
  if (spec.kind == "synthetic") {
    const auto pairs = ordered_range_pairs(spec.ranges.size());
    const auto [si, ti] = pairs.at(run.pair_index);
    const DataConfig& base = synthetic_base(cfg);
    sources.push_back(with_range(base, spec.ranges[si])
                          .load(chain(cfg.seed, kSourceData, run.pair_index,
                                      run.seed_index)));
    target = with_range(base, spec.ranges[ti])
                 .load(chain(cfg.seed, kTargetData, run.pair_index,
                             run.seed_index));
  } else {
    // Leave one out: a dataset materializes identically in every run and
    // role, so its seed depends only on its own index.
    for (size_t d = 0; d < spec.datasets.size(); ++d) {
      auto split = spec.datasets[d].load(chain(cfg.seed, kSourceData, d, 0));
      if (static_cast<int>(d) == run.pair_index)
        target = std::move(split);
      else
        sources.push_back(std::move(split));
    }
  }

  const uint64_t cell = static_cast<uint64_t>(run.pair_index) * 16 +
                        static_cast<uint64_t>(run.model_index);
  auto model = make_forecaster(
      run.model, spec.hyper.value(run.model, nlohmann::json::object()),
      chain(cfg.seed, kModelInit, cell, run.seed_index));

  TrainConfig tc = cfg.train.value_or(TrainConfig{});
  tc.seed = chain(cfg.seed, kTrainStream, cell, run.seed_index);
  if (auto* cfa_model = dynamic_cast<CfaModel*>(model.get()))
    train_cfa(*cfa_model, sources, tc);
  else
    train_baseline(*model, sources, tc);

  const auto eval = evaluate(*model, target);
  res.status = "ok";
  res.mse_scaled = eval.mse_scaled;
  res.nd = eval.nd;
  res.nd_defined = eval.nd_defined;
  return res;
}

RunOutcome run_or_reuse(const ExperimentConfig& cfg, const GridRun& run,
                        bool overwrite) {
  RunOutcome out;
  out.result.id = run.id;
  const auto path = run_file(cfg, run);
  if (!overwrite && load_finished_result(path, out.result)) {
    out.reused = true;
    return out;
  }
  try {
    out.result = execute_run(cfg, run);
  } catch (const std::exception& e) {
    out.result = GridRunResult{};
    out.result.id = run.id;
    out.result.error = e.what();
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write run result: " + path.string());
  os << result_json(run, out.result).dump(2) << '\n';
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; needs at least two values.
double std_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_report(const ExperimentConfig& cfg,
                  const std::vector<GridRun>& runs,
                  const std::vector<GridRunResult>& results) {
  const auto& spec = *cfg.grid;
  const bool synthetic = spec.kind == "synthetic";
  const std::string metric = synthetic ? "mse_scaled" : "nd";

  int n_pairs = 0;
  for (const auto& r : runs) n_pairs = std::max(n_pairs, r.pair_index + 1);

  // cell -> model -> per-seed metric values, in run order
  std::vector<std::vector<std::vector<double>>> values(
      n_pairs, std::vector<std::vector<double>>(spec.models.size()));
  std::vector<std::pair<std::string, std::string>> cell_names(n_pairs);
  std::vector<std::string> failed_runs;
  for (size_t i = 0; i < runs.size(); ++i) {
    const auto& run = runs[i];
    const auto& res = results[i];
    cell_names[run.pair_index] = {run.source, run.target};
    if (res.status != "ok" || (!synthetic && !res.nd_defined)) {
      failed_runs.push_back(run.id);
      continue;
    }
    values[run.pair_index][run.model_index].push_back(
        synthetic ? res.mse_scaled : res.nd);
  }

  nlohmann::json cells = nlohmann::json::array();
  for (int p = 0; p < n_pairs; ++p) {
    nlohmann::json models = nlohmann::json::object();
    for (size_t m = 0; m < spec.models.size(); ++m) {
      const auto& v = values[p][m];
      nlohmann::json entry{{"values", v}};
      entry["mean"] = v.empty() ? nlohmann::json() : nlohmann::json(mean_of(v));
      entry["std"] = v.size() >= 2
                         ? nlohmann::json(std_of(v, mean_of(v)))
                         : nlohmann::json();
      models[spec.models[m]] = std::move(entry);
    }
    cells.push_back({{"source", cell_names[p].first},
                     {"target", cell_names[p].second},
                     {"models", std::move(models)}});
  }
  nlohmann::json report{{"kind", spec.kind},
                        {"metric", metric},
                        {"n_seeds", spec.n_seeds},
                        {"models", spec.models},
                        {"cells", std::move(cells)},
                        {"failed_runs", failed_runs}};
  {
    const auto path = fs::path(cfg.out_dir) / "report.json";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << report.dump(2) << '\n';
  }

  const auto path = fs::path(cfg.out_dir) / "report.csv";
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  if (synthetic)
    os << "source,target";
  else
    os << "target";
  for (const auto& m : spec.models) {
    os << ',' << m << '_' << metric << "_mean";
    if (spec.n_seeds >= 2) os << ',' << m << '_' << metric << "_std";
  }
  os << '\n';
  for (int p = 0; p < n_pairs; ++p) {
    if (synthetic) os << cell_names[p].first << ',';
    os << cell_names[p].second;
    for (size_t m = 0; m < spec.models.size(); ++m) {
      const auto& v = values[p][m];
      os << ',' << (v.empty() ? "failed" : fmt(mean_of(v)));
      if (spec.n_seeds >= 2)
        os << ',' << (v.size() >= 2 ? fmt(std_of(v, mean_of(v))) : "");
    }
    os << '\n';
  }
}

void write_manifest(const ExperimentConfig& cfg,
                    const std::vector<GridRun>& runs) {
  const auto& spec = *cfg.grid;
  nlohmann::json j{{"kind", spec.kind},
                   {"seed", cfg.seed},
                   {"n_seeds", spec.n_seeds},
                   {"models", spec.models}};
  if (spec.kind == "synthetic") {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : spec.ranges) ranges.push_back({r.lo, r.hi});
    j["ranges"] = std::move(ranges);
  } else {
    nlohmann::json names = nlohmann::json::array();
    for (size_t d = 0; d < spec.datasets.size(); ++d)
      names.push_back(dataset_label(spec.datasets[d], d));
    j["datasets"] = std::move(names);
  }
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& r : runs) ids.push_back(r.id);
  j["runs"] = std::move(ids);
  const auto path = fs::path(cfg.out_dir) / "grid.json";
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace

std::vector<GridRun> enumerate_grid_runs(const ExperimentConfig& cfg) {
  const auto& spec = grid_spec(cfg);
  std::vector<GridRun> runs;
  auto add_cell = [&](int pair_index, const std::string& source,
                      const std::string& target) {
    for (size_t m = 0; m < spec.models.size(); ++m) {
      for (int s = 0; s < spec.n_seeds; ++s) {
        GridRun r;
        r.source = source;
        r.target = target;
        r.model = spec.models[m];
        r.seed_index = s;
        r.pair_index = pair_index;
        r.model_index = static_cast<int>(m);
        runs.push_back(std::move(r));
      }
    }
  };
  if (spec.kind == "synthetic") {
    synthetic_base(cfg);  // fail early if the template is missing
    const auto pairs = ordered_range_pairs(spec.ranges.size());
    for (size_t p = 0; p < pairs.size(); ++p)
      add_cell(static_cast<int>(p), spec.ranges[pairs[p].first].label(),
               spec.ranges[pairs[p].second].label());
    for (auto& r : runs)
      r.id = "src" + r.source + "__tgt" + r.target + "__" + r.model + "__s" +
             std::to_string(r.seed_index);
  } else {
    std::vector<std::string> labels;
    for (size_t d = 0; d < spec.datasets.size(); ++d)
      labels.push_back(dataset_label(spec.datasets[d], d));
    for (size_t t = 0; t < spec.datasets.size(); ++t) {
      std::string source;
      for (size_t d = 0; d < labels.size(); ++d) {
        if (d == t) continue;
        if (!source.empty()) source += '+';
        source += labels[d];
      }
      add_cell(static_cast<int>(t), source, labels[t]);
    }
    for (auto& r : runs)
      r.id = "tgt" + r.target + "__" + r.model + "__s" +
             std::to_string(r.seed_index);
  }
  return runs;
}

GridStats run_grid(const ExperimentConfig& cfg, int jobs, bool overwrite) {
  const auto runs = enumerate_grid_runs(cfg);
  fs::create_directories(fs::path(cfg.out_dir) / "runs");
  write_manifest(cfg, runs);

  std::vector<GridRunResult> results(runs.size());
  GridStats stats;
  std::mutex mu;
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      auto out = run_or_reuse(cfg, runs[i], overwrite);
      results[i] = std::move(out.result);
      std::lock_guard<std::mutex> lock(mu);
      if (results[i].status != "ok")
        stats.failed += 1;
      else if (out.reused)
        stats.reused += 1;
      else
        stats.trained += 1;
    }
  };
  const int n_workers = std::max(
      1, std::min(jobs, static_cast<int>(runs.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  write_report(cfg, runs, results);
  return stats;
}

}  // namespace cfa
