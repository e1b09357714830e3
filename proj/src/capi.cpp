#include "cfa/cfa.h"

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "cfa/commands.hpp"
#include "cfa/config.hpp"
#include "cfa/errors.hpp"
#include "cfa/evaluation.hpp"
#include "cfa/models.hpp"
#include "cfa/timeseries.hpp"

struct cfa_model {
  std::unique_ptr<cfa::Forecaster> model;
};

struct cfa_dataset {
  cfa::DatasetSplit split;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& message) { g_last_error = message; }

// Single place that turns exceptions into status codes.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return CFA_OK;
  } catch (const cfa::ConfigError& e) {
    set_error(e.what());
    return CFA_ERR_CONFIG;
  } catch (const cfa::DataError& e) {
    set_error(e.what());
    return CFA_ERR_CONFIG;
  } catch (const cfa::IoError& e) {
    set_error(e.what());
    return CFA_ERR_CONFIG;
  } catch (const cfa::TrainingFault& e) {
    set_error(e.what());
    return CFA_ERR_TRAINING;
  } catch (const cfa::EvalError& e) {
    set_error(e.what());
    return CFA_ERR_EVAL;
  } catch (const std::exception& e) {
    set_error(e.what());
    return CFA_ERR_INTERNAL;
  } catch (...) {
    set_error("unknown failure");
    return CFA_ERR_INTERNAL;
  }
}

cfa::RunOptions to_options(const cfa_run_options* opt) {
  cfa::RunOptions o;
  if (!opt) return o;
  if (opt->has_seed) o.seed = opt->seed;
  if (opt->out_dir) o.out_dir = std::string(opt->out_dir);
  if (opt->ranges) o.ranges = std::string(opt->ranges);
  o.jobs = opt->jobs > 0 ? opt->jobs : 1;
  o.overwrite = opt->overwrite != 0;
  o.dump_keys = opt->dump_keys != 0;
  return o;
}

int run_command(void (*command)(const std::string&, const cfa::RunOptions&),
                const char* config_path, const cfa_run_options* opt) {
  return guarded([&] {
    if (!config_path) throw cfa::ConfigError("config_path must not be NULL");
    command(config_path, to_options(opt));
  });
}

void require_arg(bool ok, const char* message) {
  if (!ok) throw cfa::ConfigError(message);
}

}  // namespace

extern "C" {

const char* cfa_version(void) { return "1.0.0"; }

const char* cfa_last_error(void) { return g_last_error.c_str(); }

int cfa_cmd_synth(const char* config_path, const cfa_run_options* opt) {
  return run_command(&cfa::cmd_synth, config_path, opt);
}

int cfa_cmd_train(const char* config_path, const cfa_run_options* opt) {
  return run_command(&cfa::cmd_train, config_path, opt);
}

int cfa_cmd_eval(const char* config_path, const cfa_run_options* opt) {
  return run_command(&cfa::cmd_eval, config_path, opt);
}

int cfa_cmd_grid(const char* config_path, const cfa_run_options* opt) {
  return run_command(&cfa::cmd_grid, config_path, opt);
}

int cfa_cmd_probe(const char* config_path, const cfa_run_options* opt) {
  return run_command(&cfa::cmd_probe, config_path, opt);
}

int cfa_model_load(const char* path, cfa_model** out) {
  return guarded([&] {
    require_arg(path && out, "cfa_model_load needs path and out");
    auto handle = std::make_unique<cfa_model>();
    try {
      handle->model = cfa::load_forecaster(path);
    } catch (const cfa::IoError& e) {
      throw cfa::EvalError(e.what());
    }
    *out = handle.release();
  });
}

void cfa_model_free(cfa_model* model) { delete model; }

const char* cfa_model_name(const cfa_model* model) {
  if (!model || !model->model) return "";
  return model->model->name().c_str();
}

int cfa_model_forecast(const cfa_model* model, const double* context, size_t n,
                       size_t horizon, double* out) {
  return guarded([&] {
    require_arg(model && model->model, "cfa_model_forecast needs a model");
    require_arg(context && out, "cfa_model_forecast needs context and out");
    require_arg(n >= 4, "cfa_model_forecast needs a context of at least 4");
    require_arg(horizon >= 1, "cfa_model_forecast needs horizon >= 1");
    const auto w = cfa::scale_window(std::span<const double>(context, n),
                                     std::span<const double>());
    const auto scaled =
        model->model->forecast(w.context, static_cast<int>(horizon));
    for (size_t i = 0; i < horizon; ++i)
      out[i] = scaled[i] * w.scale_std + w.scale_mean;
  });
}

int cfa_model_representation_dim(const cfa_model* model) {
  if (!model || !model->model) return 0;
  return model->model->representation_dim();
}

int cfa_model_representation(const cfa_model* model, const double* context,
                             size_t n, double* out, size_t out_len) {
  return guarded([&] {
    require_arg(model && model->model, "cfa_model_representation needs a model");
    require_arg(context && out, "cfa_model_representation needs context and out");
    require_arg(n >= 4, "cfa_model_representation needs a context of at least 4");
    const auto dim = static_cast<size_t>(model->model->representation_dim());
    require_arg(out_len >= dim, "cfa_model_representation: out_len too small");
    const auto w = cfa::scale_window(std::span<const double>(context, n),
                                     std::span<const double>());
    const auto rep = model->model->representation(w.context);
    std::memcpy(out, rep.data(), dim * sizeof(double));
  });
}

int cfa_dataset_open_jsonl(const char* path, int tau_c, int tau_f,
                           cfa_dataset** out) {
  return guarded([&] {
    require_arg(path && out, "cfa_dataset_open_jsonl needs path and out");
    require_arg(tau_c >= 0 && tau_f >= 0,
                "cfa_dataset_open_jsonl: window lengths must be >= 0");
    cfa::DataConfig cfg;
    cfg.synthetic = false;
    cfg.path = path;
    cfg.tau_c = tau_c;
    cfg.tau_f = tau_f;
    auto handle = std::make_unique<cfa_dataset>();
    handle->split = cfg.load(0);
    *out = handle.release();
  });
}

int cfa_dataset_from_json(const char* json_text, cfa_dataset** out) {
  return guarded([&] {
    require_arg(json_text && out, "cfa_dataset_from_json needs json and out");
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded())
      throw cfa::ConfigError("cfa_dataset_from_json: not valid JSON");
    const auto cfg = cfa::DataConfig::from_json(j, "data");
    auto handle = std::make_unique<cfa_dataset>();
    handle->split = cfg.load(cfg.seed.value_or(0));
    *out = handle.release();
  });
}

void cfa_dataset_free(cfa_dataset* dataset) { delete dataset; }

int cfa_dataset_n_test_windows(const cfa_dataset* dataset) {
  if (!dataset) return 0;
  return static_cast<int>(dataset->split.test.size());
}

int cfa_evaluate(const cfa_model* model, const cfa_dataset* dataset,
                 double* mse_scaled, double* nd, int* nd_defined) {
  return guarded([&] {
    require_arg(model && model->model, "cfa_evaluate needs a model");
    require_arg(dataset != nullptr, "cfa_evaluate needs a dataset");
    const auto res = cfa::evaluate(*model->model, dataset->split);
    if (mse_scaled) *mse_scaled = res.mse_scaled;
    if (nd_defined) *nd_defined = res.nd_defined ? 1 : 0;
    if (nd && res.nd_defined) *nd = res.nd;
  });
}

}  // extern "C"
