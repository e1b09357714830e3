#include "cfa/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include <json.hpp>

#include "cfa/checkpoint.hpp"
#include "cfa/config.hpp"
#include "cfa/errors.hpp"
#include "cfa/evaluation.hpp"
#include "cfa/grid.hpp"
#include "cfa/models.hpp"
#include "cfa/training.hpp"

namespace cfa {

namespace {

namespace fs = std::filesystem;

struct Loaded {
  nlohmann::json raw;  // the config document after command-line overrides
  ExperimentConfig cfg;
};

nlohmann::json parse_ranges_flag(const std::string& s) {
  nlohmann::json arr = nlohmann::json::array();
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    const size_t colon = tok.find(':');
    if (colon == std::string::npos)
      throw ConfigError("--ranges entries must look like lo:hi, got '" + tok +
                        "'");
    try {
      arr.push_back({std::stod(tok.substr(0, colon)),
                     std::stod(tok.substr(colon + 1))});
    } catch (const std::exception&) {
      throw ConfigError("--ranges entries must be numeric, got '" + tok + "'");
    }
    pos = next + 1;
  }
  return arr;
}

Loaded load(const std::string& config_path, const RunOptions& opt) {
  std::ifstream is(config_path);
  if (!is) throw ConfigError("cannot read config file: " + config_path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("config file is not valid JSON: " + config_path);
  if (!j.is_object()) throw ConfigError("the config root must be an object");
  if (opt.seed) j["seed"] = *opt.seed;
  if (opt.out_dir) j["out_dir"] = *opt.out_dir;
  if (opt.ranges) {
    if (!j.contains("grid") || !j["grid"].is_object())
      throw ConfigError("--ranges needs a grid section in the config");
    j["grid"]["ranges"] = parse_ranges_flag(*opt.ranges);
  }
  return Loaded{j, ExperimentConfig::from_json(j)};
}

fs::path out_root(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw ConfigError("out_dir is required; set it or pass --out");
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir);
}

void refuse_existing(const fs::path& p, bool overwrite) {
  if (!overwrite && fs::exists(p))
    throw ConfigError("refusing to overwrite " + p.string() +
                      "; pass --overwrite");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("short write on " + p.string());
}

nlohmann::json manifest_base(const std::string& command, const Loaded& in) {
  return {{"command", command}, {"config", in.raw}};
}

std::vector<DatasetSplit> load_sources(const ExperimentConfig& cfg) {
  if (cfg.sources.empty())
    throw ConfigError("this command needs a data or sources section");
  std::vector<DatasetSplit> splits;
  splits.reserve(cfg.sources.size());
  for (size_t i = 0; i < cfg.sources.size(); ++i)
    splits.push_back(cfg.sources[i].load(cfg.data_seed(i)));
  return splits;
}

// Missing model files and undefined metrics are evaluation faults, not
// config faults; route the I/O flavor accordingly.
[[noreturn]] void rethrow_as_eval(const IoError& e) {
  throw EvalError(e.what());
}

}  // namespace

void cmd_synth(const std::string& config_path, const RunOptions& opt) {
  const Loaded in = load(config_path, opt);
  const auto& cfg = in.cfg;
  if (cfg.sources.size() != 1 || !cfg.sources[0].synthetic)
    throw ConfigError("synth needs exactly one synthetic data section");
  const auto root = out_root(cfg);

  const auto train_path = root / "train.jsonl";
  const auto test_path = root / "test.jsonl";
  const auto manifest_path = root / "manifest.json";
  refuse_existing(train_path, opt.overwrite);
  refuse_existing(test_path, opt.overwrite);
  refuse_existing(manifest_path, opt.overwrite);

  SyntheticConfig sc = cfg.sources[0].synth;
  sc.seed = cfg.data_seed(0);
  sc.validate();
  const auto series = generate_synthetic_dataset(sc);
  const int n_train = cfg.sources[0].n_train;
  if (n_train < 0 || n_train > static_cast<int>(series.size()))
    throw ConfigError("data.n_train must lie in [0, n_series]");

  const std::vector<TimeSeries> train(series.begin(),
                                      series.begin() + n_train);
  const std::vector<TimeSeries> test(series.begin() + n_train, series.end());
  write_jsonl(train, train_path.string());
  write_jsonl(test, test_path.string());

  nlohmann::json manifest = manifest_base("synth", in);
  manifest["resolved"] = {{"data_seed", sc.seed},
                          {"n_train", n_train},
                          {"n_test", static_cast<int>(test.size())},
                          {"files", {{"train", "train.jsonl"},
                                     {"test", "test.jsonl"}}}};
  write_text(manifest_path, manifest.dump(2) + "\n");
  std::cerr << "synth: wrote " << train.size() << " train and " << test.size()
            << " test series to " << root.string() << "\n";
}

void cmd_train(const std::string& config_path, const RunOptions& opt) {
  const Loaded in = load(config_path, opt);
  const auto& cfg = in.cfg;
  if (!cfg.model) throw ConfigError("train needs a model section");
  const auto root = out_root(cfg);
  const auto splits = load_sources(cfg);

  const auto ckpt_path = root / "model.ckpt";
  const auto history_path = root / "history.json";
  const auto manifest_path = root / "manifest.json";

  auto model =
      make_forecaster(cfg.model->name, cfg.model->hyper, cfg.model_seed());
  if (cfg.train_resume) {
    if (!fs::exists(ckpt_path))
      throw ConfigError("resume requested but no checkpoint at " +
                        ckpt_path.string());
    const auto meta = nn::peek_checkpoint(ckpt_path.string());
    if (meta.model != model->name() || meta.hyper != model->hyper())
      throw ConfigError(
          "resume checkpoint was written by a different model or "
          "hyperparameters: " +
          ckpt_path.string());
    nn::load_checkpoint(ckpt_path.string(), model->params());
  } else {
    refuse_existing(ckpt_path, opt.overwrite);
    refuse_existing(history_path, opt.overwrite);
    refuse_existing(manifest_path, opt.overwrite);
  }

  TrainConfig tc = cfg.train.value_or(TrainConfig{});
  if (!cfg.train) tc.seed = cfg.train_seed();

  TrainHistory history;
  if (auto* cfa_model = dynamic_cast<CfaModel*>(model.get()))
    history = train_cfa(*cfa_model, splits, tc);
  else
    history = train_baseline(*model, splits, tc);

  save_forecaster(ckpt_path.string(), *model);
  write_text(history_path, history.to_json().dump(2) + "\n");

  nlohmann::json manifest = manifest_base("train", in);
  nlohmann::json data_seeds = nlohmann::json::array();
  for (size_t i = 0; i < cfg.sources.size(); ++i)
    data_seeds.push_back(cfg.data_seed(i));
  manifest["resolved"] = {{"model_seed", cfg.model_seed()},
                          {"train_seed", tc.seed},
                          {"data_seeds", std::move(data_seeds)},
                          {"resumed", cfg.train_resume}};
  write_text(manifest_path, manifest.dump(2) + "\n");

  const auto& last = history.epochs.back();
  double lf = 0.0;
  for (const auto& s : last) lf += s.forecast_loss;
  std::cerr << "train: " << model->name() << " for " << tc.epochs
            << " epochs, final forecast loss "
            << lf / static_cast<double>(last.size()) << "\n";
}

void cmd_eval(const std::string& config_path, const RunOptions& opt) {
  const Loaded in = load(config_path, opt);
  const auto& cfg = in.cfg;
  if (!cfg.eval) throw ConfigError("eval needs an eval section");
  if (cfg.sources.size() != 1)
    throw ConfigError("eval needs exactly one data section (the target)");
  const auto root = out_root(cfg);

  const auto report_path = root / "report.json";
  const auto forecast_path = root / "forecasts.csv";
  const auto keys_path = root / "keys.csv";
  refuse_existing(report_path, opt.overwrite);
  refuse_existing(forecast_path, opt.overwrite);
  if (opt.dump_keys) refuse_existing(keys_path, opt.overwrite);

  if (!fs::exists(cfg.eval->checkpoint))
    throw EvalError("checkpoint not found: " + cfg.eval->checkpoint);
  std::unique_ptr<Forecaster> model;
  try {
    model = load_forecaster(cfg.eval->checkpoint);
  } catch (const IoError& e) {
    rethrow_as_eval(e);
  }

  const auto split = cfg.sources[0].load(cfg.data_seed(0));
  const auto res = evaluate(*model, split, true);

  const auto& metric = cfg.eval->metric;
  if ((metric == "nd" || metric == "both") && !res.nd_defined)
    throw EvalError("nd is undefined: the true values sum to zero magnitude");

  nlohmann::json report{{"model", model->name()},
                        {"checkpoint", cfg.eval->checkpoint},
                        {"metric", metric},
                        {"n_windows", res.n_windows}};
  if (metric == "mse" || metric == "both") report["mse_scaled"] = res.mse_scaled;
  if (metric == "nd" || metric == "both") report["nd"] = res.nd;
  write_text(report_path, report.dump(2) + "\n");

  {
    std::ofstream os(forecast_path);
    if (!os) throw IoError("cannot write " + forecast_path.string());
    write_forecast_csv(os, res.forecasts);
  }
  if (opt.dump_keys) {
    std::ofstream os(keys_path);
    if (!os) throw IoError("cannot write " + keys_path.string());
    write_keys_csv(os, *model, split);
  }
  std::cerr << "eval: " << model->name() << " on " << res.n_windows
            << " windows";
  if (metric != "nd") std::cerr << ", mse_scaled " << res.mse_scaled;
  if (metric != "mse" && res.nd_defined) std::cerr << ", nd " << res.nd;
  std::cerr << "\n";
}

void cmd_grid(const std::string& config_path, const RunOptions& opt) {
  const Loaded in = load(config_path, opt);
  out_root(in.cfg);
  const auto stats = run_grid(in.cfg, opt.jobs, opt.overwrite);
  std::cerr << "grid: " << stats.trained << " trained, " << stats.reused
            << " reused, " << stats.failed << " failed\n";
}

void cmd_probe(const std::string& config_path, const RunOptions& opt) {
  const Loaded in = load(config_path, opt);
  const auto& cfg = in.cfg;
  if (!cfg.probe) throw ConfigError("probe needs a probe section");
  const auto root = out_root(cfg);
  const auto out_path = root / "probe.json";
  refuse_existing(out_path, opt.overwrite);

  const auto& spec = *cfg.probe;
  ProbeConfig pc = spec.probe;
  pc.seed = cfg.probe_seed();

  auto run_one = [&](const std::string& path) {
    KeyDump dump;
    try {
      dump = read_keys_csv(path);
    } catch (const IoError& e) {
      rethrow_as_eval(e);
    }
    std::vector<std::vector<double>> train_x;
    std::vector<double> train_y;
    std::vector<double> all_y;
    all_y.reserve(dump.period.size());
    for (size_t i = 0; i < dump.period.size(); ++i) {
      const double label = dump.period[i] / static_cast<double>(spec.tau_c);
      all_y.push_back(label);
      if (dump.period[i] >= spec.source_min &&
          dump.period[i] <= spec.source_max) {
        train_x.push_back(dump.x[i]);
        train_y.push_back(label);
      }
    }
    if (train_x.empty())
      throw EvalError("no rows of " + path +
                      " fall inside the probe source range");
    const auto res = invariance_probe(train_x, train_y, dump.x, all_y, pc);
    return nlohmann::json{{"file", path},
                          {"n_rows", static_cast<int>(dump.x.size())},
                          {"n_train", static_cast<int>(train_x.size())},
                          {"train_mse", res.train_mse},
                          {"test_mse", res.test_mse}};
  };

  nlohmann::json a = run_one(spec.dump_a);
  nlohmann::json b = run_one(spec.dump_b);
  const double bt = b["test_mse"].get<double>();
  nlohmann::json report{{"a", a}, {"b", b}};
  report["test_error_ratio_a_over_b"] =
      bt > 0.0 ? nlohmann::json(a["test_mse"].get<double>() / bt)
               : nlohmann::json();
  write_text(out_path, report.dump(2) + "\n");
  std::cerr << "probe: test mse a " << a["test_mse"].get<double>() << ", b "
            << bt << "\n";
}

}  // namespace cfa
