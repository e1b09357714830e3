#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfa/rng.hpp"

namespace cfa {

// One univariate series with an identifier and a sampling-frequency tag.
struct TimeSeries {
  std::string id;
  std::string freq_tag;  // "H", "D", "M", "Q", "synthetic", ...
  std::vector<double> values;
  std::optional<std::string> start;  // ISO-8601, if known
};

// A (context, forecast-target) pair, the unit of training and evaluation.
// The context is stored scaled; the target stays raw. scale_mean/scale_std
// are the context statistics used for both directions.
struct WindowSample {
  std::vector<double> context;  // scaled, length tau_c
  std::vector<double> target;   // unscaled, length tau_f
  double scale_mean = 0.0;
  double scale_std = 1.0;  // strictly positive
  std::string series_id;

  std::vector<double> scaled_target() const;
};

struct SyntheticConfig {
  double p_min = 10.0;
  double p_max = 20.0;
  double amp_min = 0.5;
  double amp_max = 2.0;
  double noise_sigma = 0.1;
  int n_series = 0;
  int tau_c = 96;
  int tau_f = 16;
  uint64_t seed = 0;
  // Test hook: pin the phase of every series instead of drawing it.
  std::optional<double> fixed_phase;

  void validate() const;  // throws ConfigError
};

// One series' training region, from which windows are sampled.
struct TrainSource {
  std::string series_id;
  std::vector<double> values;
};

struct DatasetSplit {
  std::vector<TrainSource> train;
  std::vector<WindowSample> test;
  std::string freq_tag;
  int tau_c = 0;
  int tau_f = 0;
  int skipped_series = 0;  // too short for one window (real split)

  // Number of valid window start positions of one training region.
  int64_t valid_starts(const TrainSource& src) const;
  int64_t total_valid_starts() const;
};

// ---------------------------------------------------------------------------
// Operations

// Sine plus Gaussian noise: A*sin(2*pi*t/P + phi) + eps_t, with per-series
// parameters drawn from cfg and per-series RNG streams derived from the
// master seed, so generation order never changes the data.
std::vector<TimeSeries> generate_synthetic_dataset(const SyntheticConfig& cfg);

// First n_train series become training regions; every remaining series
// becomes exactly one test window (it is one context plus one forecast).
DatasetSplit split_synthetic(const std::vector<TimeSeries>& series,
                             int n_train, int tau_c, int tau_f);

// Per series: the last tau_f values form the test target with the
// preceding tau_c values as its context; the training region is everything
// except the final tau_f values. Series shorter than tau_c + tau_f are
// skipped and counted.
DatasetSplit split_real(const std::vector<TimeSeries>& series, int tau_c,
                        int tau_f, bool warn = true);

// Draw batch_size windows: a start position is picked uniformly over all
// valid positions of all series, which makes each series' probability
// proportional to its number of valid starts.
std::vector<WindowSample> sample_training_batch(const DatasetSplit& split,
                                                int batch_size, Rng& rng);

// ceil(total valid positions / batch_size): one epoch visits each valid
// window position once in expectation.
int64_t batches_per_epoch(const DatasetSplit& split, int batch_size);

// Scale by the context mean and standard deviation (std floored at 1e-6).
WindowSample scale_window(std::span<const double> raw_context,
                          std::span<const double> raw_target,
                          const std::string& series_id = "");

// forecast * scale_std + scale_mean. Lengths must match the sample target.
std::vector<double> unscale_forecast(std::span<const double> scaled_forecast,
                                     const WindowSample& sample);

// ---------------------------------------------------------------------------
// Dataset files: JSON Lines, one object per series:
//   {"id": str, "freq": str, "start": optional str, "target": [numbers]}

std::vector<TimeSeries> read_jsonl(const std::string& path);
void write_jsonl(const std::vector<TimeSeries>& series,
                 const std::string& path);

// Nominal seasonal period of a frequency tag (H 24, D 7, M 12, Q 4),
// or 0 when the tag has no convention.
int nominal_period(const std::string& freq_tag);

}  // namespace cfa
