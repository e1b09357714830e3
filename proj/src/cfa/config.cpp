#include "cfa/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cfa/errors.hpp"
#include "cfa/models.hpp"
#include "cfa/rng.hpp"

namespace cfa {

namespace {

void check_known_keys(const nlohmann::json& j,
                      std::initializer_list<const char*> allowed,
                      const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) ok = true;
    if (!ok) throw ConfigError("unknown field " + where + "." + item.key());
  }
}

template <typename T>
T get_number(const nlohmann::json& j, const char* key, T fallback,
             const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw ConfigError(where + "." + key + " must be a number");
  return j[key].get<T>();
}

std::string get_string(const nlohmann::json& j, const char* key,
                       const std::string& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string())
    throw ConfigError(where + "." + key + " must be a string");
  return j[key].get<std::string>();
}

std::string trim_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// DataConfig

DataConfig DataConfig::from_json(const nlohmann::json& j,
                                 const std::string& where) {
  DataConfig d;
  const std::string kind = get_string(j, "kind", "synthetic", where);
  if (kind == "synthetic") {
    check_known_keys(j,
                     {"kind", "p_min", "p_max", "amp_min", "amp_max",
                      "noise_sigma", "n_series", "n_train", "tau_c", "tau_f",
                      "seed"},
                     where);
    d.synthetic = true;
    auto& s = d.synth;
    s.p_min = get_number<double>(j, "p_min", s.p_min, where);
    s.p_max = get_number<double>(j, "p_max", s.p_max, where);
    s.amp_min = get_number<double>(j, "amp_min", s.amp_min, where);
    s.amp_max = get_number<double>(j, "amp_max", s.amp_max, where);
    s.noise_sigma = get_number<double>(j, "noise_sigma", s.noise_sigma, where);
    s.n_series = get_number<int>(j, "n_series", s.n_series, where);
    s.tau_c = get_number<int>(j, "tau_c", s.tau_c, where);
    s.tau_f = get_number<int>(j, "tau_f", s.tau_f, where);
    if (j.contains("seed")) d.seed = get_number<uint64_t>(j, "seed", 0, where);
    s.seed = d.seed.value_or(0);
    // Default split ratio 4:1, the usual train/test proportion here.
    d.n_train = get_number<int>(j, "n_train", s.n_series * 4 / 5, where);
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (d.n_train < 0 || d.n_train >= s.n_series)
      throw ConfigError(where + ".n_train must be in [0, n_series)");
  } else if (kind == "jsonl") {
    check_known_keys(j, {"kind", "path", "tau_c", "tau_f"}, where);
    d.synthetic = false;
    d.path = get_string(j, "path", "", where);
    if (d.path.empty()) throw ConfigError(where + ".path is required");
    // Omitted window lengths are derived from the file's frequency tag at
    // load time: context 5x the nominal period, forecast one period.
    d.tau_c = get_number<int>(j, "tau_c", 0, where);
    d.tau_f = get_number<int>(j, "tau_f", 0, where);
    if (j.contains("tau_c") && d.tau_c < 1)
      throw ConfigError(where + ".tau_c must be >= 1");
    if (j.contains("tau_f") && d.tau_f < 1)
      throw ConfigError(where + ".tau_f must be >= 1");
  } else {
    throw ConfigError(where + ".kind must be \"synthetic\" or \"jsonl\"");
  }
  return d;
}

nlohmann::json DataConfig::to_json() const {
  if (synthetic) {
    return {{"kind", "synthetic"},
            {"p_min", synth.p_min},
            {"p_max", synth.p_max},
            {"amp_min", synth.amp_min},
            {"amp_max", synth.amp_max},
            {"noise_sigma", synth.noise_sigma},
            {"n_series", synth.n_series},
            {"n_train", n_train},
            {"tau_c", synth.tau_c},
            {"tau_f", synth.tau_f},
            {"seed", synth.seed}};
  }
  nlohmann::json j{{"kind", "jsonl"}, {"path", path}};
  if (tau_c > 0) j["tau_c"] = tau_c;
  if (tau_f > 0) j["tau_f"] = tau_f;
  return j;
}

DatasetSplit DataConfig::load(uint64_t resolved_seed) const {
  if (synthetic) {
    SyntheticConfig cfg = synth;
    cfg.seed = resolved_seed;
    auto series = generate_synthetic_dataset(cfg);
    return split_synthetic(series, n_train, cfg.tau_c, cfg.tau_f);
  }
  auto series = read_jsonl(path);
  int c = tau_c, f = tau_f;
  if (c < 1 || f < 1) {
    if (series.empty())
      throw DataError(path + ": cannot derive window lengths from an empty "
                             "dataset; set tau_c and tau_f");
    const int p = nominal_period(series.front().freq_tag);
    if (p < 1)
      throw DataError(path + ": cannot derive window lengths for freq tag \"" +
                      series.front().freq_tag + "\"; set tau_c and tau_f");
    if (c < 1) c = 5 * p;
    if (f < 1) f = p;
  }
  return split_real(series, c, f);
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::from_json(const nlohmann::json& j,
                                   const std::string& where) {
  check_known_keys(j, {"name", "hyper", "seed"}, where);
  ModelConfig m;
  m.name = get_string(j, "name", m.name, where);
  if (m.name != "mean" && m.name != "lstm" && m.name != "cfa")
    throw ConfigError(where + ".name must be one of mean, lstm, cfa");
  if (j.contains("hyper")) m.hyper = j["hyper"];
  if (j.contains("seed")) m.seed = get_number<uint64_t>(j, "seed", 0, where);
  // Validate hyperparameters now so a bad config never starts a run.
  if (m.name == "lstm") LstmHyper::from_json(m.hyper);
  if (m.name == "cfa") CfaHyper::from_json(m.hyper);
  if (m.name == "mean" && !m.hyper.empty())
    throw ConfigError(where + ".hyper must be empty for the mean model");
  return m;
}

// ---------------------------------------------------------------------------
// EvalSpec

EvalSpec EvalSpec::from_json(const nlohmann::json& j,
                             const std::string& where) {
  check_known_keys(j, {"checkpoint", "metric"}, where);
  EvalSpec e;
  e.checkpoint = get_string(j, "checkpoint", "", where);
  if (e.checkpoint.empty()) throw ConfigError(where + ".checkpoint is required");
  e.metric = get_string(j, "metric", e.metric, where);
  if (e.metric != "mse" && e.metric != "nd" && e.metric != "both")
    throw ConfigError(where + ".metric must be one of mse, nd, both");
  return e;
}

// ---------------------------------------------------------------------------
// GridSpec

std::string RangeSpec::label() const {
  return trim_number(lo) + "-" + trim_number(hi);
}

GridSpec GridSpec::from_json(const nlohmann::json& j,
                             const std::string& where) {
  check_known_keys(j, {"kind", "ranges", "models", "n_seeds", "hyper",
                       "datasets"},
                   where);
  GridSpec g;
  g.kind = get_string(j, "kind", g.kind, where);
  if (g.kind != "synthetic" && g.kind != "real")
    throw ConfigError(where + ".kind must be \"synthetic\" or \"real\"");

  if (j.contains("models")) {
    if (!j["models"].is_array())
      throw ConfigError(where + ".models must be an array");
    g.models.clear();
    for (const auto& m : j["models"]) {
      if (!m.is_string())
        throw ConfigError(where + ".models entries must be strings");
      g.models.push_back(m.get<std::string>());
    }
  }
  if (g.models.empty()) throw ConfigError(where + ".models must be non-empty");
  std::set<std::string> seen;
  for (const auto& m : g.models) {
    if (m != "mean" && m != "lstm" && m != "cfa")
      throw ConfigError(where + ".models entries must be mean, lstm or cfa");
    if (!seen.insert(m).second)
      throw ConfigError(where + ".models lists " + m + " twice");
  }

  g.n_seeds = get_number<int>(j, "n_seeds", g.n_seeds, where);
  if (g.n_seeds < 1) throw ConfigError(where + ".n_seeds must be >= 1");

  if (j.contains("hyper")) {
    check_known_keys(j["hyper"], {"cfa", "lstm"}, where + ".hyper");
    g.hyper = j["hyper"];
    if (g.hyper.contains("cfa")) CfaHyper::from_json(g.hyper["cfa"]);
    if (g.hyper.contains("lstm")) LstmHyper::from_json(g.hyper["lstm"]);
  }

  if (g.kind == "synthetic") {
    if (!j.contains("ranges") || !j["ranges"].is_array())
      throw ConfigError(where + ".ranges is required for a synthetic grid");
    for (const auto& r : j["ranges"]) {
      if (!r.is_array() || r.size() != 2 || !r[0].is_number() ||
          !r[1].is_number())
        throw ConfigError(where + ".ranges entries must be [lo, hi] numbers");
      RangeSpec spec{r[0].get<double>(), r[1].get<double>()};
      if (!(spec.lo > 0.0) || !(spec.hi >= spec.lo))
        throw ConfigError(where + ".ranges entries need 0 < lo <= hi");
      g.ranges.push_back(spec);
    }
    if (g.ranges.size() < 2)
      throw ConfigError(where + ".ranges needs at least two ranges");
  } else {
    if (!j.contains("datasets") || !j["datasets"].is_array())
      throw ConfigError(where + ".datasets is required for a real grid");
    int idx = 0;
    for (const auto& d : j["datasets"]) {
      g.datasets.push_back(DataConfig::from_json(
          d, where + ".datasets[" + std::to_string(idx) + "]"));
      ++idx;
    }
    if (g.datasets.size() < 2)
      throw ConfigError(where + ".datasets needs at least two datasets");
  }
  return g;
}

// ---------------------------------------------------------------------------
// ProbeSpec

ProbeSpec ProbeSpec::from_json(const nlohmann::json& j,
                               const std::string& where) {
  check_known_keys(
      j, {"dump_a", "dump_b", "source_range", "tau_c", "hidden", "epochs",
          "lr", "seed"},
      where);
  ProbeSpec p;
  p.dump_a = get_string(j, "dump_a", "", where);
  p.dump_b = get_string(j, "dump_b", "", where);
  if (p.dump_a.empty() || p.dump_b.empty())
    throw ConfigError(where + ".dump_a and .dump_b are required");
  if (!j.contains("source_range") || !j["source_range"].is_array() ||
      j["source_range"].size() != 2)
    throw ConfigError(where + ".source_range must be [lo, hi]");
  p.source_min = j["source_range"][0].get<double>();
  p.source_max = j["source_range"][1].get<double>();
  if (!(p.source_min > 0.0) || !(p.source_max >= p.source_min))
    throw ConfigError(where + ".source_range needs 0 < lo <= hi");
  p.tau_c = get_number<int>(j, "tau_c", 0, where);
  if (p.tau_c < 4) throw ConfigError(where + ".tau_c must be >= 4");
  p.probe.hidden = get_number<int>(j, "hidden", p.probe.hidden, where);
  p.probe.epochs = get_number<int>(j, "epochs", p.probe.epochs, where);
  p.probe.lr = get_number<double>(j, "lr", p.probe.lr, where);
  if (j.contains("seed")) p.seed = get_number<uint64_t>(j, "seed", 0, where);
  p.probe.validate();
  return p;
}

// ---------------------------------------------------------------------------
// ExperimentConfig

namespace {

TrainConfig train_from_json(const nlohmann::json& j, const std::string& where,
                            bool* resume) {
  check_known_keys(j,
                   {"epochs", "batch_size", "n_batches_per_epoch", "lambda",
                    "lr", "disc_lr", "seed", "resume"},
                   where);
  TrainConfig t;
  t.epochs = get_number<int>(j, "epochs", t.epochs, where);
  t.batch_size = get_number<int>(j, "batch_size", t.batch_size, where);
  t.n_batches_per_epoch =
      get_number<int>(j, "n_batches_per_epoch", t.n_batches_per_epoch, where);
  t.lambda = get_number<double>(j, "lambda", t.lambda, where);
  t.gen_opt.lr = get_number<double>(j, "lr", t.gen_opt.lr, where);
  t.disc_opt.lr = get_number<double>(j, "disc_lr", t.gen_opt.lr, where);
  if (j.contains("resume")) {
    if (!j["resume"].is_boolean())
      throw ConfigError(where + ".resume must be a boolean");
    *resume = j["resume"].get<bool>();
  }
  t.validate();
  return t;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"seed", "out_dir", "data", "sources", "model", "train",
                    "eval", "grid", "probe"},
                   "config");
  ExperimentConfig c;
  c.seed = get_number<uint64_t>(j, "seed", 0, "config");
  c.out_dir = get_string(j, "out_dir", "", "config");

  if (j.contains("data") && j.contains("sources"))
    throw ConfigError("config has both data and sources; use one");
  if (j.contains("data"))
    c.sources.push_back(DataConfig::from_json(j["data"], "data"));
  if (j.contains("sources")) {
    if (!j["sources"].is_array() || j["sources"].empty())
      throw ConfigError("sources must be a non-empty array");
    int idx = 0;
    for (const auto& d : j["sources"]) {
      c.sources.push_back(
          DataConfig::from_json(d, "sources[" + std::to_string(idx) + "]"));
      ++idx;
    }
  }

  if (j.contains("model"))
    c.model = ModelConfig::from_json(j["model"], "model");
  if (j.contains("train")) {
    bool resume = false;
    c.train = train_from_json(j["train"], "train", &resume);
    c.train_resume = resume;
    if (j["train"].contains("seed"))
      c.train->seed = get_number<uint64_t>(j["train"], "seed", 0, "train");
    else
      c.train->seed = derive_seed(c.seed, 2);
  }
  if (j.contains("eval")) c.eval = EvalSpec::from_json(j["eval"], "eval");
  if (j.contains("grid")) c.grid = GridSpec::from_json(j["grid"], "grid");
  if (j.contains("probe")) c.probe = ProbeSpec::from_json(j["probe"], "probe");
  return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("config file is not valid JSON: " + path);
  return from_json(j);
}

uint64_t ExperimentConfig::model_seed() const {
  if (model && model->seed) return *model->seed;
  return derive_seed(seed, 1);
}

uint64_t ExperimentConfig::train_seed() const {
  if (train) return train->seed;
  return derive_seed(seed, 2);
}

uint64_t ExperimentConfig::data_seed(size_t source_index) const {
  if (source_index < sources.size() && sources[source_index].seed)
    return *sources[source_index].seed;
  return derive_seed(seed, 0x100 + source_index);
}

uint64_t ExperimentConfig::probe_seed() const {
  if (probe && probe->seed) return *probe->seed;
  return derive_seed(seed, 4);
}

}  // namespace cfa
