#include "cfa/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cfa/errors.hpp"

namespace cfa {

namespace {
constexpr double kStdFloor = 1e-6;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}
}  // namespace

std::vector<double> WindowSample::scaled_target() const {
  std::vector<double> out(target.size());
  for (size_t i = 0; i < target.size(); ++i)
    out[i] = (target[i] - scale_mean) / scale_std;
  return out;
}

void SyntheticConfig::validate() const {
  if (!(p_min > 0.0)) throw ConfigError("synthetic: p_min must be > 0");
  if (!(p_min <= p_max)) throw ConfigError("synthetic: p_min must be <= p_max");
  if (!(p_max <= tau_c))
    throw ConfigError("synthetic: p_max must be <= tau_c");
  if (!(amp_min <= amp_max))
    throw ConfigError("synthetic: amp_min must be <= amp_max");
  if (noise_sigma < 0.0)
    throw ConfigError("synthetic: noise_sigma must be >= 0");
  if (n_series <= 0) throw ConfigError("synthetic: n_series must be > 0");
  if (tau_c <= 0) throw ConfigError("synthetic: tau_c must be > 0");
  if (tau_f <= 0) throw ConfigError("synthetic: tau_f must be > 0");
}

std::vector<TimeSeries> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();

  const int len = cfg.tau_c + cfg.tau_f;
  std::vector<TimeSeries> out(cfg.n_series);
  for (int i = 0; i < cfg.n_series; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i)));
    const double phase =
        cfg.fixed_phase ? *cfg.fixed_phase : rng.uniform(0.0, 2.0 * M_PI);
    const double period = rng.uniform(cfg.p_min, cfg.p_max);
    const double amp = rng.uniform(cfg.amp_min, cfg.amp_max);

    TimeSeries& s = out[i];
    s.id = "synthetic-" + std::to_string(i);
    s.freq_tag = "synthetic";
    s.values.resize(len);
    for (int t = 0; t < len; ++t) {
      double v = amp * std::sin(2.0 * M_PI * t / period + phase);
      if (cfg.noise_sigma > 0.0) v += rng.normal(0.0, cfg.noise_sigma);
      s.values[t] = v;
    }
  }
  return out;
}

int64_t DatasetSplit::valid_starts(const TrainSource& src) const {
  const int64_t window = tau_c + tau_f;
  const int64_t n = static_cast<int64_t>(src.values.size());
  return n >= window ? n - window + 1 : 0;
}

int64_t DatasetSplit::total_valid_starts() const {
  int64_t total = 0;
  for (const auto& src : train) total += valid_starts(src);
  return total;
}

DatasetSplit split_synthetic(const std::vector<TimeSeries>& series,
                             int n_train, int tau_c, int tau_f) {
  if (n_train >= static_cast<int>(series.size()))
    throw ConfigError("split_synthetic: n_train (" + std::to_string(n_train) +
                      ") leaves no test series");
  if (n_train < 0) throw ConfigError("split_synthetic: n_train must be >= 0");

  DatasetSplit split;
  split.freq_tag = series.empty() ? "" : series.front().freq_tag;
  split.tau_c = tau_c;
  split.tau_f = tau_f;

  const size_t window = static_cast<size_t>(tau_c) + tau_f;
  for (size_t i = 0; i < series.size(); ++i) {
    const TimeSeries& s = series[i];
    if (s.values.size() != window)
      throw ConfigError("split_synthetic: series " + s.id + " has length " +
                        std::to_string(s.values.size()) + ", expected " +
                        std::to_string(window));
    if (static_cast<int>(i) < n_train) {
      split.train.push_back({s.id, s.values});
    } else {
      std::span<const double> ctx(s.values.data(), tau_c);
      std::span<const double> tgt(s.values.data() + tau_c, tau_f);
      split.test.push_back(scale_window(ctx, tgt, s.id));
    }
  }
  return split;
}

DatasetSplit split_real(const std::vector<TimeSeries>& series, int tau_c,
                        int tau_f, bool warn) {
  DatasetSplit split;
  split.freq_tag = series.empty() ? "" : series.front().freq_tag;
  split.tau_c = tau_c;
  split.tau_f = tau_f;

  const size_t window = static_cast<size_t>(tau_c) + tau_f;
  for (const TimeSeries& s : series) {
    if (s.values.size() < window) {
      ++split.skipped_series;
      if (warn)
        std::fprintf(stderr,
                     "warning: series %s has %zu values, needs %zu; skipped\n",
                     s.id.c_str(), s.values.size(), window);
      continue;
    }
    const size_t n = s.values.size();
    std::span<const double> ctx(s.values.data() + n - tau_f - tau_c, tau_c);
    std::span<const double> tgt(s.values.data() + n - tau_f, tau_f);
    split.test.push_back(scale_window(ctx, tgt, s.id));
    split.train.push_back(
        {s.id, std::vector<double>(s.values.begin(), s.values.end() - tau_f)});
  }
  return split;
}

std::vector<WindowSample> sample_training_batch(const DatasetSplit& split,
                                                int batch_size, Rng& rng) {
  require(batch_size >= 1, "sample_training_batch: batch_size must be >= 1");
  const int64_t total = split.total_valid_starts();
  if (total == 0)
    throw DataError("sample_training_batch: no valid training windows");

  // Prefix sums over per-series valid-start counts; one global uniform draw
  // is a series draw proportional to its count plus a uniform start.
  std::vector<int64_t> prefix(split.train.size() + 1, 0);
  for (size_t i = 0; i < split.train.size(); ++i)
    prefix[i + 1] = prefix[i] + split.valid_starts(split.train[i]);

  std::vector<WindowSample> batch;
  batch.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    const int64_t pos =
        static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(total)));
    const auto it = std::upper_bound(prefix.begin(), prefix.end(), pos);
    const size_t si = static_cast<size_t>(it - prefix.begin()) - 1;
    const int64_t start = pos - prefix[si];
    const auto& vals = split.train[si].values;
    std::span<const double> ctx(vals.data() + start, split.tau_c);
    std::span<const double> tgt(vals.data() + start + split.tau_c,
                                split.tau_f);
    batch.push_back(scale_window(ctx, tgt, split.train[si].series_id));
  }
  return batch;
}

int64_t batches_per_epoch(const DatasetSplit& split, int batch_size) {
  require(batch_size >= 1, "batches_per_epoch: batch_size must be >= 1");
  const int64_t total = split.total_valid_starts();
  return (total + batch_size - 1) / batch_size;
}

WindowSample scale_window(std::span<const double> raw_context,
                          std::span<const double> raw_target,
                          const std::string& series_id) {
  require(!raw_context.empty(), "scale_window: empty context");
  require(all_finite(raw_context), "scale_window: non-finite context");
  require(all_finite(raw_target), "scale_window: non-finite target");

  const double mean =
      std::accumulate(raw_context.begin(), raw_context.end(), 0.0) /
      raw_context.size();
  double var = 0.0;
  for (double x : raw_context) var += (x - mean) * (x - mean);
  var /= raw_context.size();
  const double std_dev = std::max(std::sqrt(var), kStdFloor);

  WindowSample s;
  s.series_id = series_id;
  s.scale_mean = mean;
  s.scale_std = std_dev;
  s.context.resize(raw_context.size());
  for (size_t i = 0; i < raw_context.size(); ++i)
    s.context[i] = (raw_context[i] - mean) / std_dev;
  s.target.assign(raw_target.begin(), raw_target.end());
  return s;
}

std::vector<double> unscale_forecast(std::span<const double> scaled_forecast,
                                     const WindowSample& sample) {
  require(scaled_forecast.size() == sample.target.size(),
          "unscale_forecast: forecast length " +
              std::to_string(scaled_forecast.size()) +
              " does not match target length " +
              std::to_string(sample.target.size()));
  std::vector<double> out(scaled_forecast.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = scaled_forecast[i] * sample.scale_std + sample.scale_mean;
  return out;
}

int nominal_period(const std::string& freq_tag) {
  if (freq_tag == "H") return 24;
  if (freq_tag == "D") return 7;
  if (freq_tag == "M") return 12;
  if (freq_tag == "Q") return 4;
  return 0;
}

std::vector<TimeSeries> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  std::vector<TimeSeries> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": not a JSON object");
    TimeSeries s;
    try {
      s.id = j.at("id").get<std::string>();
      s.freq_tag = j.at("freq").get<std::string>();
      if (j.contains("start") && !j["start"].is_null())
        s.start = j["start"].get<std::string>();
      s.values = j.at("target").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (s.values.empty())
      throw IoError(path + ":" + std::to_string(line_no) + ": empty target");
    if (!all_finite(s.values))
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": non-finite value in target");
    out.push_back(std::move(s));
  }
  return out;
}

void write_jsonl(const std::vector<TimeSeries>& series,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const TimeSeries& s : series) {
    nlohmann::json j;
    j["id"] = s.id;
    j["freq"] = s.freq_tag;
    if (s.start) j["start"] = *s.start;
    j["target"] = s.values;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace cfa
