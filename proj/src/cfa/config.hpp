#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa/evaluation.hpp"
#include "cfa/timeseries.hpp"
#include "cfa/training.hpp"

namespace cfa {

// One dataset: either a synthetic generator spec or a JSON-Lines file.
struct DataConfig {
  bool synthetic = true;

  SyntheticConfig synth;  // synthetic branch
  int n_train = 0;
  std::optional<uint64_t> seed;  // falls back to a derivation of the run seed

  std::string path;  // jsonl branch
  int tau_c = 0;
  int tau_f = 0;

  static DataConfig from_json(const nlohmann::json& j,
                              const std::string& where);
  nlohmann::json to_json() const;

  // Builds the split; resolved_seed feeds the synthetic generator.
  DatasetSplit load(uint64_t resolved_seed) const;
};

struct ModelConfig {
  std::string name = "cfa";
  nlohmann::json hyper = nlohmann::json::object();
  std::optional<uint64_t> seed;  // parameter initialization

  static ModelConfig from_json(const nlohmann::json& j,
                               const std::string& where);
};

struct EvalSpec {
  std::string checkpoint;
  std::string metric = "both";  // "mse" | "nd" | "both"

  static EvalSpec from_json(const nlohmann::json& j, const std::string& where);
};

struct RangeSpec {
  double lo = 0.0;
  double hi = 0.0;
  std::string label() const;
};

struct GridSpec {
  std::string kind = "synthetic";  // or "real" (leave-one-out over datasets)
  std::vector<RangeSpec> ranges;
  std::vector<std::string> models = {"mean", "lstm", "cfa"};
  int n_seeds = 3;
  nlohmann::json hyper = nlohmann::json::object();  // {"cfa": {...}, ...}
  std::vector<DataConfig> datasets;                 // real kind only

  static GridSpec from_json(const nlohmann::json& j, const std::string& where);
};

struct ProbeSpec {
  std::string dump_a;  // e.g. attention keys
  std::string dump_b;  // e.g. recurrent hidden states
  double source_min = 0.0;
  double source_max = 0.0;
  int tau_c = 0;
  ProbeConfig probe;
  std::optional<uint64_t> seed;

  static ProbeSpec from_json(const nlohmann::json& j, const std::string& where);
};

// Parsed run description. Sections are optional at parse time; each command
// checks for the ones it needs.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir;

  std::vector<DataConfig> sources;  // "data" object or "sources" array
  std::optional<ModelConfig> model;
  std::optional<TrainConfig> train;
  bool train_resume = false;
  std::optional<EvalSpec> eval;
  std::optional<GridSpec> grid;
  std::optional<ProbeSpec> probe;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load_file(const std::string& path);

  // Seed streams for the pieces a run needs; explicit config values win.
  uint64_t model_seed() const;
  uint64_t train_seed() const;
  uint64_t data_seed(size_t source_index) const;
  uint64_t probe_seed() const;
};

}  // namespace cfa
