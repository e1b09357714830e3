#pragma once

#include <string>
#include <vector>

#include "cfa/config.hpp"

namespace cfa {

// One training-and-evaluation unit of the grid. Every seed lives in the id,
// so a run's outcome is independent of scheduling and of the other runs.
struct GridRun {
  std::string id;
  std::string source;  // range label, or "loo:<target>" for leave-one-out
  std::string target;
  std::string model;
  int seed_index = 0;
  int pair_index = 0;
  int model_index = 0;
};

struct GridRunResult {
  std::string id;
  std::string status = "failed";  // "ok" | "failed"
  double mse_scaled = 0.0;
  double nd = 0.0;
  bool nd_defined = false;
  std::string error;
};

struct GridStats {
  int trained = 0;
  int reused = 0;  // completed runs found on disk and kept
  int failed = 0;
};

// All runs of the configured grid, in report order: every ordered pair of
// distinct ranges for the synthetic kind, one leave-one-out cell per
// dataset for the real kind, times models, times seeds.
std::vector<GridRun> enumerate_grid_runs(const ExperimentConfig& cfg);

// Executes the whole grid with `jobs` worker threads. Artifacts under
// cfg.out_dir: grid.json (run enumeration), runs/<id>.json (one per run),
// report.json and report.csv (per-cell seed aggregates). A finished run is
// reused on a second invocation unless overwrite is set; a failed run is
// recorded and retried next time, never aborts the grid.
GridStats run_grid(const ExperimentConfig& cfg, int jobs, bool overwrite);

}  // namespace cfa
