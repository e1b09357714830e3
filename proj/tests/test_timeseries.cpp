#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "cfa/errors.hpp"
#include "cfa/spectral.hpp"
#include "cfa/timeseries.hpp"

using namespace cfa;

namespace {

constexpr double kPi = std::numbers::pi;

SyntheticConfig tiny_config() {
  SyntheticConfig cfg;
  cfg.n_series = 8;
  cfg.tau_c = 40;
  cfg.tau_f = 8;
  cfg.seed = 123;
  return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("noiseless unit sine with pinned phase is exact") {
  SyntheticConfig cfg;
  cfg.p_min = cfg.p_max = 12.0;
  cfg.amp_min = cfg.amp_max = 1.0;
  cfg.noise_sigma = 0.0;
  cfg.n_series = 3;
  cfg.tau_c = 36;
  cfg.tau_f = 12;
  cfg.seed = 9;
  cfg.fixed_phase = 0.0;
  const auto series = generate_synthetic_dataset(cfg);
  REQUIRE(series.size() == 3);
  for (const auto& s : series) {
    REQUIRE(s.values.size() == 48);
    for (int t = 0; t < 48; ++t)
      CHECK(s.values[t] == doctest::Approx(std::sin(2.0 * kPi * t / 12.0))
                               .epsilon(1e-12));
  }
}

TEST_CASE("benchmark-sized generation: 5000 series of length 144") {
  SyntheticConfig cfg;
  cfg.p_min = 15.0;
  cfg.p_max = 20.0;
  cfg.amp_min = 0.5;
  cfg.amp_max = 2.0;
  cfg.noise_sigma = 0.2;
  cfg.n_series = 5000;
  cfg.tau_c = 120;
  cfg.tau_f = 24;
  cfg.seed = 77;
  const auto series = generate_synthetic_dataset(cfg);
  REQUIRE(series.size() == 5000);
  for (const auto& s : series) REQUIRE(s.values.size() == 144);

  const auto split = split_synthetic(series, 4000, 120, 24);
  CHECK(split.train.size() == 4000);
  CHECK(split.test.size() == 1000);
}

TEST_CASE("generation is deterministic and independent of call order") {
  const auto cfg = tiny_config();
  const auto a = generate_synthetic_dataset(cfg);
  const auto b = generate_synthetic_dataset(cfg);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    REQUIRE(a[i].values.size() == b[i].values.size());
    for (size_t t = 0; t < a[i].values.size(); ++t)
      CHECK(a[i].values[t] == b[i].values[t]);
  }
  // Per-series streams: a wider run reproduces the same leading series.
  auto wide = cfg;
  wide.n_series = 16;
  const auto c = generate_synthetic_dataset(wide);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(c[i].values == a[i].values);
}

TEST_CASE("noiseless series peak within one DFT bin of their period") {
  for (double p : {10.0, 13.7, 16.2, 20.0}) {
    SyntheticConfig cfg;
    cfg.p_min = cfg.p_max = p;
    cfg.amp_min = cfg.amp_max = 1.0;
    cfg.noise_sigma = 0.0;
    cfg.n_series = 4;
    cfg.tau_c = 120;
    cfg.tau_f = 24;
    cfg.seed = 31;
    for (const auto& s : generate_synthetic_dataset(cfg)) {
      const std::vector<double> ctx(s.values.begin(),
                                    s.values.begin() + cfg.tau_c);
      const auto mags = spectral::dft_magnitudes(ctx);
      int best = 0;
      for (int m = 1; m < static_cast<int>(mags.size()); ++m)
        if (mags[m] > mags[best]) best = m;
      // Bin m covers periods [n/(m+1), n/(m-1)] around n/m.
      const int m = best + 1;
      const double lo = 120.0 / (m + 1);
      const double hi = m == 1 ? 120.0 : 120.0 / (m - 1);
      CHECK(p >= lo);
      CHECK(p <= hi);
    }
  }
}

TEST_CASE("invalid synthetic configs are rejected with the field named") {
  auto cfg = tiny_config();
  cfg.p_max = cfg.tau_c + 1.0;
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(cfg),
                       doctest::Contains("p_max"), ConfigError);
  cfg = tiny_config();
  cfg.noise_sigma = -0.1;
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(cfg),
                       doctest::Contains("noise_sigma"), ConfigError);
  cfg = tiny_config();
  cfg.n_series = 0;
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(cfg),
                       doctest::Contains("n_series"), ConfigError);
}

TEST_CASE("split_synthetic windows the tail series") {
  const auto cfg = tiny_config();
  const auto series = generate_synthetic_dataset(cfg);
  const auto split = split_synthetic(series, 6, cfg.tau_c, cfg.tau_f);
  REQUIRE(split.train.size() == 6);
  REQUIRE(split.test.size() == 2);
  CHECK(split.tau_c == cfg.tau_c);
  CHECK(split.tau_f == cfg.tau_f);

  // A test sample is the series' first tau_c values scaled plus its raw
  // last tau_f values.
  const auto& s = series[6];
  const auto& w = split.test[0];
  CHECK(w.series_id == s.id);
  for (int i = 0; i < cfg.tau_f; ++i)
    CHECK(w.target[i] == s.values[cfg.tau_c + i]);
  for (int i = 0; i < cfg.tau_c; ++i)
    CHECK(w.context[i] * w.scale_std + w.scale_mean ==
          doctest::Approx(s.values[i]).epsilon(1e-12));

  CHECK_THROWS_AS(split_synthetic(series, 8, cfg.tau_c, cfg.tau_f),
                  ConfigError);

  const std::vector<TimeSeries> two(series.begin(), series.begin() + 2);
  const auto pair = split_synthetic(two, 1, cfg.tau_c, cfg.tau_f);
  CHECK(pair.train.size() == 1);
  CHECK(pair.test.size() == 1);
}

TEST_CASE("split_real takes the last window as test, the rest as train") {
  TimeSeries s;
  s.id = "r";
  s.freq_tag = "M";
  s.values.resize(200);
  for (int t = 0; t < 200; ++t) s.values[t] = t;

  const auto split = split_real({s}, 120, 24, false);
  REQUIRE(split.test.size() == 1);
  REQUIRE(split.train.size() == 1);
  const auto& w = split.test[0];
  // context = values[56..176), target = values[176..200)
  CHECK(w.context.size() == 120);
  CHECK(w.target.size() == 24);
  CHECK(w.context.front() * w.scale_std + w.scale_mean ==
        doctest::Approx(56.0));
  CHECK(w.context.back() * w.scale_std + w.scale_mean ==
        doctest::Approx(175.0));
  CHECK(w.target.front() == 176.0);
  CHECK(w.target.back() == 199.0);

  // The training region stops where the test target starts: no leakage.
  CHECK(split.train[0].values.size() == 176);
  CHECK(split.train[0].values.back() == 175.0);
}

TEST_CASE("split_real skips and counts series that are too short") {
  TimeSeries good;
  good.id = "good";
  good.freq_tag = "H";
  good.values.assign(144, 1.0);
  for (size_t t = 0; t < good.values.size(); ++t) good.values[t] = t % 7;
  TimeSeries bad;
  bad.id = "bad";
  bad.freq_tag = "H";
  bad.values.assign(143, 0.5);

  const auto split = split_real({good, bad}, 120, 24, false);
  CHECK(split.test.size() == 1);
  CHECK(split.train.size() == 1);
  CHECK(split.skipped_series == 1);
}

TEST_CASE("366 series in a monthly-shaped fixture give 366 test samples") {
  std::vector<TimeSeries> series(366);
  for (int i = 0; i < 366; ++i) {
    series[i].id = "m" + std::to_string(i);
    series[i].freq_tag = "M";
    series[i].values.resize(60 + i % 30);
    for (size_t t = 0; t < series[i].values.size(); ++t)
      series[i].values[t] = std::sin(0.3 * t + i) + 0.01 * t;
  }
  const auto split = split_real(series, 36, 12, false);
  CHECK(split.test.size() == 366);
  CHECK(split.skipped_series == 0);
}

TEST_CASE("batch sampling is proportional to valid starts") {
  // Two ramps with 10 and 30 valid start positions.
  DatasetSplit split;
  split.tau_c = 8;
  split.tau_f = 2;
  TrainSource a{"a", std::vector<double>(10 + 9)};
  TrainSource b{"b", std::vector<double>(30 + 9)};
  for (size_t t = 0; t < a.values.size(); ++t) a.values[t] = t;
  for (size_t t = 0; t < b.values.size(); ++t) b.values[t] = t;
  split.train = {a, b};
  REQUIRE(split.valid_starts(split.train[0]) == 10);
  REQUIRE(split.valid_starts(split.train[1]) == 30);

  Rng rng(2024);
  int from_b = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; i += 50) {
    const auto batch = sample_training_batch(split, 50, rng);
    REQUIRE(batch.size() == 50);
    for (const auto& w : batch) from_b += w.series_id == "b";
  }
  const double freq = static_cast<double>(from_b) / draws;
  CHECK(freq > 0.70);
  CHECK(freq < 0.80);
}

TEST_CASE("single valid start means every sample is identical") {
  DatasetSplit split;
  split.tau_c = 6;
  split.tau_f = 2;
  TrainSource only{"only", {1, 2, 3, 4, 5, 6, 7, 8}};
  split.train = {only};
  REQUIRE(split.total_valid_starts() == 1);
  Rng rng(1);
  const auto batch = sample_training_batch(split, 16, rng);
  REQUIRE(batch.size() == 16);
  for (const auto& w : batch) {
    CHECK(w.context == batch[0].context);
    CHECK(w.target == batch[0].target);
  }
}

TEST_CASE("over an epoch each valid position is visited about once") {
  DatasetSplit split;
  split.tau_c = 8;
  split.tau_f = 2;
  TrainSource a{"a", std::vector<double>(25 + 9)};
  TrainSource b{"b", std::vector<double>(15 + 9)};
  for (size_t t = 0; t < a.values.size(); ++t) a.values[t] = t;
  for (size_t t = 0; t < b.values.size(); ++t) b.values[t] = 1000.0 + t;
  split.train = {a, b};
  const int64_t total = split.total_valid_starts();
  REQUIRE(total == 40);
  const int batch = 8;
  REQUIRE(batches_per_epoch(split, batch) == 5);

  // 250 epochs of 40 draws each: normalized visit counts concentrate at 1.
  std::vector<int> visits(64, 0);
  Rng rng(424242);
  const int epochs = 250;
  for (int e = 0; e < epochs; ++e) {
    for (int64_t it = 0; it < batches_per_epoch(split, batch); ++it) {
      for (const auto& w : sample_training_batch(split, batch, rng)) {
        const double start0 = w.context[0] * w.scale_std + w.scale_mean;
        const int pos = w.series_id == "a"
                            ? static_cast<int>(std::lround(start0))
                            : 25 + static_cast<int>(
                                       std::lround(start0 - 1000.0));
        REQUIRE(pos >= 0);
        REQUIRE(pos < 40);
        visits[pos] += 1;
      }
    }
  }
  for (int pos = 0; pos < 40; ++pos) {
    const double rate = static_cast<double>(visits[pos]) / epochs;
    CHECK(rate > 0.8);
    CHECK(rate < 1.2);
  }
}

TEST_CASE("batches_per_epoch rounds up") {
  DatasetSplit split;
  split.tau_c = 8;
  split.tau_f = 2;
  TrainSource a{"a", std::vector<double>(10 + 9, 0.5)};
  split.train = {a};
  for (size_t t = 0; t < split.train[0].values.size(); ++t)
    split.train[0].values[t] = t;
  CHECK(batches_per_epoch(split, 3) == 4);
  CHECK(batches_per_epoch(split, 10) == 1);
  CHECK(batches_per_epoch(split, 64) == 1);
}

TEST_CASE("scale_window centers and normalizes by population std") {
  const std::vector<double> ctx{1.0, 3.0};
  const std::vector<double> tgt{5.0};
  const auto w = scale_window(ctx, tgt, "s");
  CHECK(w.scale_mean == doctest::Approx(2.0));
  CHECK(w.scale_std == doctest::Approx(1.0));
  CHECK(w.context[0] == doctest::Approx(-1.0));
  CHECK(w.context[1] == doctest::Approx(1.0));
  CHECK(w.target[0] == 5.0);  // stored raw
  CHECK(w.scaled_target()[0] == doctest::Approx(3.0));
}

TEST_CASE("constant context is floored, not rejected") {
  const std::vector<double> ctx{5.0, 5.0, 5.0};
  const auto w = scale_window(ctx, {}, "c");
  CHECK(w.scale_std == doctest::Approx(1e-6));
  for (double x : w.context) CHECK(x == doctest::Approx(0.0));
}

TEST_CASE("unit sine over a full period scales to amplitude sqrt(2)") {
  std::vector<double> ctx(120);
  for (int t = 0; t < 120; ++t) ctx[t] = std::sin(2.0 * kPi * t / 12.0);
  const auto w = scale_window(ctx, {}, "s");
  CHECK(w.scale_mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(w.scale_std == doctest::Approx(1.0 / std::sqrt(2.0)));
  double peak = 0.0;
  for (double x : w.context) peak = std::max(peak, std::abs(x));
  CHECK(peak == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("unscale_forecast examples and round trip") {
  WindowSample w;
  w.scale_mean = 2.0;
  w.scale_std = 1.0;
  w.target = {0.0, 0.0};
  const auto back = unscale_forecast(std::vector<double>{0.0, 0.0}, w);
  CHECK(back[0] == 2.0);
  CHECK(back[1] == 2.0);

  WindowSample w2;
  w2.scale_mean = -3.0;
  w2.scale_std = 0.5;
  w2.target = {0.0};
  CHECK(unscale_forecast(std::vector<double>{1.0}, w2)[0] ==
        doctest::Approx(-2.5));

  Rng rng(8);
  std::vector<double> raw_ctx(32), raw_tgt(6);
  for (auto& x : raw_ctx) x = rng.normal(3.0, 2.5);
  for (auto& x : raw_tgt) x = rng.normal(3.0, 2.5);
  const auto sample = scale_window(raw_ctx, raw_tgt, "rt");
  const auto round = unscale_forecast(sample.scaled_target(), sample);
  for (size_t i = 0; i < raw_tgt.size(); ++i)
    CHECK(std::abs(round[i] - raw_tgt[i]) <=
          1e-9 * std::max(1.0, std::abs(raw_tgt[i])));

  WindowSample w3;
  w3.target = {1.0, 2.0};
  CHECK_THROWS_AS(unscale_forecast(std::vector<double>{1.0}, w3),
                  ContractError);
}

TEST_CASE("jsonl round trip preserves series exactly") {
  const auto path = temp_file("cfa_test_roundtrip.jsonl");
  std::vector<TimeSeries> series(3);
  Rng rng(17);
  for (int i = 0; i < 3; ++i) {
    series[i].id = "s" + std::to_string(i);
    series[i].freq_tag = i == 0 ? "H" : "D";
    if (i == 1) series[i].start = "2020-01-01T00:00:00";
    series[i].values.resize(20 + i);
    for (auto& x : series[i].values) x = rng.normal(0.0, 3.0);
  }
  write_jsonl(series, path.string());
  const auto back = read_jsonl(path.string());
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].id == series[i].id);
    CHECK(back[i].freq_tag == series[i].freq_tag);
    CHECK(back[i].start == series[i].start);
    REQUIRE(back[i].values.size() == series[i].values.size());
    for (size_t t = 0; t < series[i].values.size(); ++t)
      CHECK(back[i].values[t] == series[i].values[t]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("jsonl reader rejects bad lines with the line number") {
  const auto path = temp_file("cfa_test_bad.jsonl");
  {
    std::ofstream os(path);
    os << R"({"id":"a","freq":"H","target":[1,2,3]})" << "\n";
    os << "not json" << "\n";
  }
  CHECK_THROWS_WITH_AS(read_jsonl(path.string()), doctest::Contains(":2"),
                       IoError);
  {
    std::ofstream os(path);
    os << R"({"id":"a","freq":"H","target":[]})" << "\n";
  }
  CHECK_THROWS_WITH_AS(read_jsonl(path.string()),
                       doctest::Contains("empty target"), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_jsonl(path.string()), IoError);
}
