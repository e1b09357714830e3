#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include <cfa/cfa.h>

int main(int argc, char** argv) {
  CLI::App app{"Frequency-adaptive time-series forecasting toolkit"};
  app.set_version_flag("--version", cfa_version());
  app.require_subcommand(1);

  std::string config;
  uint64_t seed = 0;
  std::string out_dir;
  std::string ranges;
  int jobs = 1;
  bool overwrite = false;
  bool dump_keys = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "path to the JSON run config")
        ->required();
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--jobs", jobs, "worker threads for grid cells");
    sub->add_flag("--overwrite", overwrite, "replace existing artifacts");
    sub->add_flag("--dump-keys", dump_keys,
                  "also write the representation dump (eval)");
    return sub;
  };

  add_common(app.add_subcommand("synth", "generate a synthetic dataset"));
  add_common(app.add_subcommand("train", "train one model"));
  add_common(app.add_subcommand("eval", "evaluate a checkpoint on a dataset"));
  auto* grid =
      add_common(app.add_subcommand("grid", "run the transfer grid"));
  grid->add_option("--ranges", ranges,
                   "override the grid period ranges, e.g. 10:15,15:20");
  add_common(app.add_subcommand("probe", "compare two representation dumps"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : CFA_ERR_CONFIG;
  }

  CLI::App* sub = app.get_subcommands().front();
  cfa_run_options opt{};
  opt.has_seed = sub->count("--seed") > 0 ? 1 : 0;
  opt.seed = seed;
  opt.out_dir = sub->count("--out") > 0 ? out_dir.c_str() : nullptr;
  const auto* ranges_opt = sub->get_option_no_throw("--ranges");
  opt.ranges = ranges_opt && ranges_opt->count() > 0 ? ranges.c_str() : nullptr;
  opt.jobs = jobs;
  opt.overwrite = overwrite ? 1 : 0;
  opt.dump_keys = dump_keys ? 1 : 0;

  const std::string& name = sub->get_name();
  int rc = CFA_ERR_INTERNAL;
  if (name == "synth") rc = cfa_cmd_synth(config.c_str(), &opt);
  if (name == "train") rc = cfa_cmd_train(config.c_str(), &opt);
  if (name == "eval") rc = cfa_cmd_eval(config.c_str(), &opt);
  if (name == "grid") rc = cfa_cmd_grid(config.c_str(), &opt);
  if (name == "probe") rc = cfa_cmd_probe(config.c_str(), &opt);
  if (rc != CFA_OK) std::fprintf(stderr, "error: %s\n", cfa_last_error());
  return rc;
}
