#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa/models.hpp"
#include "cfa/timeseries.hpp"

namespace cfa {

// Normalized deviation over a pooled set of forecasts:
// sum |y_hat - y| / sum |y|, accumulated jointly across windows.
struct NdAccumulator {
  double abs_err = 0.0;
  double abs_true = 0.0;

  void add(std::span<const double> forecast, std::span<const double> truth);
  double value() const;
};

double nd_metric(std::span<const double> forecast,
                 std::span<const double> truth);
double mse_metric(std::span<const double> forecast,
                  std::span<const double> truth);

struct WindowForecast {
  std::string series_id;
  std::vector<double> y_true;  // unscaled
  std::vector<double> y_pred;  // unscaled
};

struct EvalResult {
  double nd = 0.0;
  bool nd_defined = false;  // false when the truth sums to zero magnitude
  double mse_scaled = 0.0;  // mean over windows of scaled-space MSE
  int n_windows = 0;
  std::vector<WindowForecast> forecasts;

  nlohmann::json to_json() const;  // summary only
};

// Rolls the model out over every test window of the split. ND sees unscaled
// values; the MSE is measured in the model's scaled space.
EvalResult evaluate(const Forecaster& model, const DatasetSplit& split,
                    bool keep_forecasts = false);

// forecast dump: "series_id,step,y_true,y_pred", one row per horizon step.
void write_forecast_csv(std::ostream& os,
                        std::span<const WindowForecast> forecasts);

// keys dump: "k0,...,k{d-1},period" with the model's context representation
// and the dominant context period in samples.
void write_keys_csv(std::ostream& os, const Forecaster& model,
                    const DatasetSplit& split);

// A parsed keys dump: one representation row per window plus its period
// column in samples.
struct KeyDump {
  std::vector<std::vector<double>> x;
  std::vector<double> period;
};

KeyDump read_keys_csv(const std::string& path);

// Fraction of test windows whose forecast has the same dominant frequency
// bin as the true target. The bin comparison is exact when the horizon
// covers the target period at least 1.5 times; otherwise adjacent bins
// also count and a warning is recorded.
struct PeriodAgreement {
  double agreement = 0.0;
  int n_windows = 0;
  int n_widened = 0;  // windows judged with the +/-1-bin tolerance
};

PeriodAgreement forecast_period_check(const Forecaster& model,
                                      const DatasetSplit& split);

// ---------------------------------------------------------------------------
// Representation probe: a small fresh MLP tries to recover the normalized
// dominant period from a frozen representation. High probe test error on
// ranges the representation's model never saw means the representation
// carries little frequency information.

struct ProbeConfig {
  int hidden = 32;
  int epochs = 300;
  double lr = 1e-2;
  uint64_t seed = 0;

  void validate() const;
};

struct ProbeResult {
  double train_mse = 0.0;
  double test_mse = 0.0;
};

ProbeResult invariance_probe(const std::vector<std::vector<double>>& train_x,
                             std::span<const double> train_y,
                             const std::vector<std::vector<double>>& test_x,
                             std::span<const double> test_y,
                             const ProbeConfig& cfg);

// Representation rows plus normalized-period labels for every test window.
struct ProbeData {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
};

ProbeData collect_probe_data(const Forecaster& model,
                             const DatasetSplit& split);

}  // namespace cfa
