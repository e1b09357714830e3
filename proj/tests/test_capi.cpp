#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa/cfa.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_json(const fs::path& dir, const std::string& name,
                    const json& j) {
  const auto path = dir / name;
  std::ofstream f(path);
  f << j.dump(2);
  return path;
}

json mean_train_config(const fs::path& out) {
  return json{
      {"seed", 7},
      {"out_dir", out.string()},
      {"data",
       {{"kind", "synthetic"},
        {"p_min", 4},
        {"p_max", 8},
        {"noise_sigma", 0.05},
        {"n_series", 6},
        {"n_train", 5},
        {"tau_c", 16},
        {"tau_f", 4}}},
      {"model", {{"name", "mean"}}},
      {"train", {{"epochs", 1}, {"batch_size", 2}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("version and argument guards") {
  CHECK(std::string(cfa_version()) == "1.0.0");

  CHECK(cfa_cmd_train(nullptr, nullptr) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("NULL") != std::string::npos);

  CHECK(cfa_cmd_train("/no/such/config.json", nullptr) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("cannot read config file") !=
        std::string::npos);

  cfa_model* model = nullptr;
  CHECK(cfa_model_load(nullptr, &model) == CFA_ERR_CONFIG);
  CHECK(cfa_model_load("x.ckpt", nullptr) == CFA_ERR_CONFIG);
  // A missing model artifact is an evaluation failure, not a config one.
  CHECK(cfa_model_load("/no/such/model.ckpt", &model) == CFA_ERR_EVAL);
  CHECK(model == nullptr);
}

TEST_CASE("train, load and forecast through the C surface") {
  const auto dir = fresh_dir("cfa_capi_train");
  const auto cfg = write_json(dir, "config.json", mean_train_config(dir / "run"));

  REQUIRE(cfa_cmd_train(cfg.string().c_str(), nullptr) == CFA_OK);
  CHECK(fs::exists(dir / "run" / "model.ckpt"));
  CHECK(fs::exists(dir / "run" / "history.json"));
  CHECK(fs::exists(dir / "run" / "manifest.json"));

  // A second run must refuse to clobber the artifacts without overwrite.
  CHECK(cfa_cmd_train(cfg.string().c_str(), nullptr) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("refusing to overwrite") !=
        std::string::npos);
  cfa_run_options opt = {};
  opt.overwrite = 1;
  CHECK(cfa_cmd_train(cfg.string().c_str(), &opt) == CFA_OK);

  cfa_model* model = nullptr;
  const auto ckpt = (dir / "run" / "model.ckpt").string();
  REQUIRE(cfa_model_load(ckpt.c_str(), &model) == CFA_OK);
  REQUIRE(model != nullptr);
  CHECK(std::string(cfa_model_name(model)) == "mean");
  CHECK(cfa_model_representation_dim(model) == 1);

  // The mean model forecasts the raw context mean at every step.
  const std::vector<double> context{0.0, 2.0, 0.0, 2.0, 0.0, 2.0};
  std::vector<double> out(3, -1.0);
  REQUIRE(cfa_model_forecast(model, context.data(), context.size(), 3,
                             out.data()) == CFA_OK);
  for (double x : out) CHECK(x == doctest::Approx(1.0));

  std::vector<double> rep(1, -1.0);
  REQUIRE(cfa_model_representation(model, context.data(), context.size(),
                                   rep.data(), rep.size()) == CFA_OK);
  CHECK(rep[0] == doctest::Approx(0.0));  // scaled-space mean

  CHECK(cfa_model_forecast(model, context.data(), 3, 2, out.data()) ==
        CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("at least 4") != std::string::npos);
  CHECK(cfa_model_forecast(model, context.data(), context.size(), 0,
                           out.data()) == CFA_ERR_CONFIG);
  CHECK(cfa_model_forecast(model, nullptr, context.size(), 2, out.data()) ==
        CFA_ERR_CONFIG);
  CHECK(cfa_model_representation(model, context.data(), context.size(),
                                 rep.data(), 0) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("out_len") != std::string::npos);

  cfa_model_free(model);
  fs::remove_all(dir);
}

TEST_CASE("training divergence surfaces as the training status") {
  const auto dir = fresh_dir("cfa_capi_fault");
  auto cfg = mean_train_config(dir / "run");
  cfg["model"] = {{"name", "lstm"}, {"hyper", {{"hidden", 4}}}};
  // One optimizer step of this size pushes the head into overflow.
  cfg["train"] = {{"epochs", 1}, {"batch_size", 2}, {"lr", 1e200}};
  const auto path = write_json(dir, "config.json", cfg);
  CHECK(cfa_cmd_train(path.string().c_str(), nullptr) == CFA_ERR_TRAINING);
  CHECK(std::string(cfa_last_error()).find("not finite") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("datasets from json and jsonl files") {
  cfa_dataset* ds = nullptr;
  const std::string spec = R"({
    "kind": "synthetic", "p_min": 4, "p_max": 8,
    "n_series": 10, "n_train": 8, "tau_c": 16, "tau_f": 4, "seed": 3
  })";
  REQUIRE(cfa_dataset_from_json(spec.c_str(), &ds) == CFA_OK);
  REQUIRE(ds != nullptr);
  CHECK(cfa_dataset_n_test_windows(ds) == 2);
  cfa_dataset_free(ds);

  ds = nullptr;
  CHECK(cfa_dataset_from_json("{ nope", &ds) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("not valid JSON") !=
        std::string::npos);
  CHECK(cfa_dataset_from_json(R"({"kind": "synthetic", "serie": 3})", &ds) ==
        CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("serie") != std::string::npos);

  // Two 12-sample series clear the tau_c + tau_f minimum; one does not.
  const auto dir = fresh_dir("cfa_capi_jsonl");
  const auto file = dir / "series.jsonl";
  {
    std::ofstream f(file);
    for (int s = 0; s < 3; ++s) {
      json row{{"id", "s" + std::to_string(s)}, {"freq", "H"}};
      std::vector<double> values(s == 2 ? 9 : 12);
      for (size_t t = 0; t < values.size(); ++t)
        values[t] = std::sin(0.7 * static_cast<double>(t) + s);
      row["target"] = values;
      f << row.dump() << "\n";
    }
  }
  REQUIRE(cfa_dataset_open_jsonl(file.string().c_str(), 8, 2, &ds) == CFA_OK);
  CHECK(cfa_dataset_n_test_windows(ds) == 2);
  cfa_dataset_free(ds);

  // Zero window lengths resolve from the freq tag: Q gives context 20,
  // forecast 4, so only series of 24 or more values qualify.
  const auto qfile = dir / "quarters.jsonl";
  {
    std::ofstream f(qfile);
    for (int s = 0; s < 2; ++s) {
      json row{{"id", "q" + std::to_string(s)}, {"freq", "Q"}};
      row["target"] = std::vector<double>(s == 0 ? 24 : 20, 1.5);
      f << row.dump() << "\n";
    }
  }
  ds = nullptr;
  REQUIRE(cfa_dataset_open_jsonl(qfile.string().c_str(), 0, 0, &ds) == CFA_OK);
  CHECK(cfa_dataset_n_test_windows(ds) == 1);
  cfa_dataset_free(ds);

  ds = nullptr;
  CHECK(cfa_dataset_open_jsonl(qfile.string().c_str(), -3, 4, &ds) ==
        CFA_ERR_CONFIG);
  fs::remove_all(dir);
}

TEST_CASE("evaluation through the C surface") {
  const auto dir = fresh_dir("cfa_capi_eval");
  const auto cfg = write_json(dir, "config.json", mean_train_config(dir / "run"));
  REQUIRE(cfa_cmd_train(cfg.string().c_str(), nullptr) == CFA_OK);
  cfa_model* model = nullptr;
  REQUIRE(cfa_model_load((dir / "run" / "model.ckpt").string().c_str(),
                         &model) == CFA_OK);

  cfa_dataset* ds = nullptr;
  const std::string spec = R"({
    "kind": "synthetic", "p_min": 4, "p_max": 8,
    "n_series": 8, "n_train": 4, "tau_c": 16, "tau_f": 4, "seed": 9
  })";
  REQUIRE(cfa_dataset_from_json(spec.c_str(), &ds) == CFA_OK);

  double mse = -1.0, nd = -1.0;
  int nd_defined = -1;
  REQUIRE(cfa_evaluate(model, ds, &mse, &nd, &nd_defined) == CFA_OK);
  CHECK(mse > 0.0);
  CHECK(nd_defined == 1);
  CHECK(nd > 0.0);
  CHECK(std::isfinite(nd));
  // Output pointers are optional.
  CHECK(cfa_evaluate(model, ds, nullptr, nullptr, nullptr) == CFA_OK);
  CHECK(cfa_evaluate(nullptr, ds, &mse, &nd, &nd_defined) == CFA_ERR_CONFIG);
  CHECK(cfa_evaluate(model, nullptr, &mse, &nd, &nd_defined) ==
        CFA_ERR_CONFIG);

  cfa_dataset_free(ds);
  cfa_model_free(model);
  fs::remove_all(dir);
}

TEST_CASE("eval command writes a report and honors dump_keys") {
  const auto dir = fresh_dir("cfa_capi_evalcmd");
  const auto train_cfg =
      write_json(dir, "train.json", mean_train_config(dir / "run"));
  REQUIRE(cfa_cmd_train(train_cfg.string().c_str(), nullptr) == CFA_OK);

  json ec = mean_train_config(dir / "eval_out");
  ec.erase("model");
  ec.erase("train");
  ec["eval"] = {{"checkpoint", (dir / "run" / "model.ckpt").string()}};
  const auto eval_cfg = write_json(dir, "eval.json", ec);

  cfa_run_options opt = {};
  opt.dump_keys = 1;
  REQUIRE(cfa_cmd_eval(eval_cfg.string().c_str(), &opt) == CFA_OK);
  CHECK(fs::exists(dir / "eval_out" / "report.json"));
  CHECK(fs::exists(dir / "eval_out" / "forecasts.csv"));
  const auto keys = slurp(dir / "eval_out" / "keys.csv");
  CHECK(keys.rfind("k0,period", 0) == 0);
  const auto report = json::parse(slurp(dir / "eval_out" / "report.json"));
  CHECK(report.at("model") == "mean");
  CHECK(report.at("n_windows").get<int>() == 1);
  CHECK(report.contains("nd"));
  CHECK(report.contains("mse_scaled"));

  // A dangling checkpoint is an evaluation failure.
  ec["eval"]["checkpoint"] = (dir / "nowhere.ckpt").string();
  ec["out_dir"] = (dir / "eval_out2").string();
  const auto bad_cfg = write_json(dir, "eval_bad.json", ec);
  CHECK(cfa_cmd_eval(bad_cfg.string().c_str(), nullptr) == CFA_ERR_EVAL);
  CHECK(std::string(cfa_last_error()).find("checkpoint not found") !=
        std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synth command reruns byte-identically under one seed") {
  const auto dir = fresh_dir("cfa_capi_synth");
  json base = mean_train_config(dir / "a");
  base.erase("model");
  base.erase("train");
  const auto cfg_a = write_json(dir, "a.json", base);
  base["out_dir"] = (dir / "b").string();
  const auto cfg_b = write_json(dir, "b.json", base);

  REQUIRE(cfa_cmd_synth(cfg_a.string().c_str(), nullptr) == CFA_OK);
  REQUIRE(cfa_cmd_synth(cfg_b.string().c_str(), nullptr) == CFA_OK);
  CHECK(slurp(dir / "a" / "train.jsonl") == slurp(dir / "b" / "train.jsonl"));
  CHECK(slurp(dir / "a" / "test.jsonl") == slurp(dir / "b" / "test.jsonl"));
  CHECK_FALSE(slurp(dir / "a" / "train.jsonl").empty());

  // The seed override changes the stream.
  cfa_run_options opt = {};
  opt.has_seed = 1;
  opt.seed = 8;
  opt.overwrite = 1;
  REQUIRE(cfa_cmd_synth(cfg_b.string().c_str(), &opt) == CFA_OK);
  CHECK(slurp(dir / "a" / "train.jsonl") != slurp(dir / "b" / "train.jsonl"));
  fs::remove_all(dir);
}

TEST_CASE("out_dir must come from the config or the options") {
  const auto dir = fresh_dir("cfa_capi_outdir");
  json cfg = mean_train_config(dir / "run");
  cfg.erase("out_dir");
  const auto path = write_json(dir, "config.json", cfg);
  CHECK(cfa_cmd_train(path.string().c_str(), nullptr) == CFA_ERR_CONFIG);
  CHECK(std::string(cfa_last_error()).find("out_dir") != std::string::npos);

  cfa_run_options opt = {};
  const std::string out = (dir / "via_opt").string();
  opt.out_dir = out.c_str();
  CHECK(cfa_cmd_train(path.string().c_str(), &opt) == CFA_OK);
  CHECK(fs::exists(dir / "via_opt" / "model.ckpt"));
  fs::remove_all(dir);
}
