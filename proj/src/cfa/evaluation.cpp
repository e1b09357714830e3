#include "cfa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cfa/errors.hpp"
#include "cfa/spectral.hpp"

namespace cfa {

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

int dominant_bin(std::span<const double> window) {
  const auto mags = spectral::dft_magnitudes(window);
  int best = 0;
  for (int m = 1; m < static_cast<int>(mags.size()); ++m)
    if (mags[m] > mags[best]) best = m;
  return best + 1;  // magnitudes start at bin 1
}

}  // namespace

void NdAccumulator::add(std::span<const double> forecast,
                        std::span<const double> truth) {
  require(forecast.size() == truth.size(),
          "nd expects forecast and truth of equal length");
  for (size_t i = 0; i < truth.size(); ++i) {
    abs_err += std::abs(forecast[i] - truth[i]);
    abs_true += std::abs(truth[i]);
  }
}

double NdAccumulator::value() const {
  if (abs_true <= 0.0)
    throw EvalError("nd is undefined: the true values sum to zero magnitude");
  return abs_err / abs_true;
}

double nd_metric(std::span<const double> forecast,
                 std::span<const double> truth) {
  NdAccumulator acc;
  acc.add(forecast, truth);
  return acc.value();
}

double mse_metric(std::span<const double> forecast,
                  std::span<const double> truth) {
  require(forecast.size() == truth.size() && !truth.empty(),
          "mse expects non-empty inputs of equal length");
  double acc = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double d = forecast[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(truth.size());
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json j{{"mse_scaled", mse_scaled}, {"n_windows", n_windows}};
  j["nd"] = nd_defined ? nlohmann::json(nd) : nlohmann::json();
  return j;
}

EvalResult evaluate(const Forecaster& model, const DatasetSplit& split,
                    bool keep_forecasts) {
  require(!split.test.empty(), "evaluate needs test windows");
  EvalResult res;
  NdAccumulator nd;
  for (const auto& w : split.test) {
    const int h = static_cast<int>(w.target.size());
    const auto pred_scaled = model.forecast(w.context, h);
    const auto pred = unscale_forecast(pred_scaled, w);
    nd.add(pred, w.target);
    res.mse_scaled += mse_metric(pred_scaled, w.scaled_target());
    res.n_windows += 1;
    if (keep_forecasts)
      res.forecasts.push_back({w.series_id, w.target, pred});
  }
  res.nd_defined = nd.abs_true > 0.0;
  if (res.nd_defined) res.nd = nd.value();
  res.mse_scaled /= res.n_windows;
  return res;
}

void write_forecast_csv(std::ostream& os,
                        std::span<const WindowForecast> forecasts) {
  os << "series_id,step,y_true,y_pred\n";
  for (const auto& f : forecasts) {
    for (size_t s = 0; s < f.y_true.size(); ++s) {
      os << f.series_id << ',' << s << ',' << fmt(f.y_true[s]) << ','
         << fmt(f.y_pred[s]) << '\n';
    }
  }
}

void write_keys_csv(std::ostream& os, const Forecaster& model,
                    const DatasetSplit& split) {
  require(!split.test.empty(), "keys dump needs test windows");
  const int d = model.representation_dim();
  for (int i = 0; i < d; ++i) os << 'k' << i << ',';
  os << "period\n";
  for (const auto& w : split.test) {
    const auto rep = model.representation(w.context);
    require(static_cast<int>(rep.size()) == d,
            "representation width does not match the declared dimension");
    const auto mags = spectral::dft_magnitudes(w.context);
    const double period = spectral::top_k_periods(
        mags, static_cast<int>(w.context.size()), 1)[0];
    for (int i = 0; i < d; ++i) os << fmt(rep[i]) << ',';
    os << fmt(period) << '\n';
  }
}

KeyDump read_keys_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keys dump: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("keys dump is empty: " + path);
  const size_t n_cols = 1 + std::count(line.begin(), line.end(), ',');
  if (n_cols < 2 || line.substr(line.rfind(',') + 1) != "period")
    throw DataError("keys dump needs a header ending in 'period': " + path);
  KeyDump dump;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(n_cols);
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      try {
        row.push_back(std::stod(line.substr(pos, next - pos)));
      } catch (const std::exception&) {
        throw DataError("keys dump " + path + " line " +
                        std::to_string(line_no) + ": not a number");
      }
      pos = next + 1;
    }
    if (row.size() != n_cols)
      throw DataError("keys dump " + path + " line " +
                      std::to_string(line_no) + ": expected " +
                      std::to_string(n_cols) + " columns, got " +
                      std::to_string(row.size()));
    dump.period.push_back(row.back());
    row.pop_back();
    dump.x.push_back(std::move(row));
  }
  if (dump.x.empty())
    throw DataError("keys dump has no data rows: " + path);
  return dump;
}

PeriodAgreement forecast_period_check(const Forecaster& model,
                                      const DatasetSplit& split) {
  require(!split.test.empty(), "period check needs test windows");
  PeriodAgreement out;
  double agree = 0.0;
  for (const auto& w : split.test) {
    const int h = static_cast<int>(w.target.size());
    if (h < 4)
      throw EvalError("period check needs horizons of at least 4 steps");
    const auto pred = model.forecast(w.context, h);
    const auto target = w.scaled_target();
    const int true_bin = dominant_bin(target);
    const int pred_bin = dominant_bin(pred);
    // Bin 1 means the horizon holds fewer than two cycles of the measured
    // period; the bin estimate is too coarse there for an exact match.
    const double measured_period = static_cast<double>(h) / true_bin;
    const bool widen = static_cast<double>(h) < 1.5 * measured_period;
    if (widen) out.n_widened += 1;
    const int tol = widen ? 1 : 0;
    if (std::abs(pred_bin - true_bin) <= tol) agree += 1.0;
    out.n_windows += 1;
  }
  out.agreement = agree / out.n_windows;
  return out;
}

// ---------------------------------------------------------------------------
// Probe

void ProbeConfig::validate() const {
  if (hidden < 1) throw ConfigError("probe.hidden must be >= 1");
  if (epochs < 1) throw ConfigError("probe.epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("probe.lr must be > 0");
}

namespace {

nn::TensorRef rows_tensor(const std::vector<std::vector<double>>& x, int d) {
  std::vector<double> flat;
  flat.reserve(x.size() * static_cast<size_t>(d));
  for (const auto& row : x) {
    require(static_cast<int>(row.size()) == d,
            "probe rows must share one width");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return nn::make_tensor({static_cast<int>(x.size()), d}, std::move(flat));
}

}  // namespace

ProbeResult invariance_probe(const std::vector<std::vector<double>>& train_x,
                             std::span<const double> train_y,
                             const std::vector<std::vector<double>>& test_x,
                             std::span<const double> test_y,
                             const ProbeConfig& cfg) {
  cfg.validate();
  require(!train_x.empty() && train_x.size() == train_y.size(),
          "probe needs matching training rows and labels");
  require(!test_x.empty() && test_x.size() == test_y.size(),
          "probe needs matching test rows and labels");
  const int d = static_cast<int>(train_x[0].size());

  // Standardize features on training statistics so representations with
  // different scales compete on content, not magnitude.
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& row : train_x)
    for (int i = 0; i < d; ++i) mean[i] += row[i];
  for (int i = 0; i < d; ++i) mean[i] /= static_cast<double>(train_x.size());
  for (const auto& row : train_x)
    for (int i = 0; i < d; ++i) {
      const double c = row[i] - mean[i];
      sd[i] += c * c;
    }
  for (int i = 0; i < d; ++i)
    sd[i] = std::max(std::sqrt(sd[i] / static_cast<double>(train_x.size())),
                     1e-6);
  auto standardized = [&](const std::vector<std::vector<double>>& x) {
    std::vector<std::vector<double>> out = x;
    for (auto& row : out)
      for (int i = 0; i < d; ++i) row[i] = (row[i] - mean[i]) / sd[i];
    return out;
  };

  auto xtr = rows_tensor(standardized(train_x), d);
  auto xte = rows_tensor(standardized(test_x), d);
  auto ytr = nn::make_tensor({static_cast<int>(train_y.size()), 1},
                             std::vector<double>(train_y.begin(), train_y.end()));
  auto yte = nn::make_tensor({static_cast<int>(test_y.size()), 1},
                             std::vector<double>(test_y.begin(), test_y.end()));

  Rng rng(cfg.seed);
  auto w1 = nn::make_param({d, cfg.hidden});
  auto b1 = nn::make_param({cfg.hidden});
  auto w2 = nn::make_param({cfg.hidden, 1});
  auto b2 = nn::make_param({1});
  nn::init_glorot(*w1, d, cfg.hidden, rng);
  nn::init_glorot(*w2, cfg.hidden, 1, rng);

  const std::vector<nn::TensorRef> params = {w1, b1, w2, b2};
  nn::AdamState state;
  nn::AdamConfig opt;
  opt.lr = cfg.lr;

  auto forward = [&](nn::Tape& tape, const nn::TensorRef& x) {
    return tape.linear(tape.relu(tape.linear(x, w1, b1)), w2, b2);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& p : params) p->zero_grad();
    nn::Tape tape;
    auto loss = tape.mse(forward(tape, xtr), ytr);
    if (!std::isfinite(loss->v[0]))
      throw EvalError("probe training diverged at epoch " +
                      std::to_string(epoch));
    tape.backward(loss);
    nn::adam_step(params, state, opt);
  }

  nn::Tape eval_tape(false);
  ProbeResult res;
  res.train_mse = eval_tape.mse(forward(eval_tape, xtr), ytr)->v[0];
  res.test_mse = eval_tape.mse(forward(eval_tape, xte), yte)->v[0];
  return res;
}

ProbeData collect_probe_data(const Forecaster& model,
                             const DatasetSplit& split) {
  require(!split.test.empty(), "probe data needs test windows");
  ProbeData out;
  for (const auto& w : split.test) {
    out.x.push_back(model.representation(w.context));
    out.y.push_back(spectral::domain_index(w.context, 1).periods_normalized[0]);
  }
  return out;
}

}  // namespace cfa
