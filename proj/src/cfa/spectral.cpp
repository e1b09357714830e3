#include "cfa/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfa/errors.hpp"

namespace cfa::spectral {

std::vector<double> dft_magnitudes(std::span<const double> window) {
  const int n = static_cast<int>(window.size());
  require(n >= 4, "dft_magnitudes: window length must be >= 4");

  const double mean =
      std::accumulate(window.begin(), window.end(), 0.0) / n;
  std::vector<double> w(window.begin(), window.end());
  for (double& v : w) v -= mean;

  const int n_bins = n / 2;
  std::vector<double> mags(n_bins);
  const double step = 2.0 * M_PI / n;
  for (int m = 1; m <= n_bins; ++m) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double theta = step * m * t;
      re += w[t] * std::cos(theta);
      im -= w[t] * std::sin(theta);
    }
    mags[m - 1] = std::hypot(re, im);
  }
  return mags;
}

std::vector<double> top_k_periods(std::span<const double> magnitudes,
                                  int n, int k) {
  require(k >= 1, "top_k_periods: k must be >= 1");
  require(k <= static_cast<int>(magnitudes.size()),
          "top_k_periods: k exceeds number of bins");

  std::vector<int> order(magnitudes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (magnitudes[a] != magnitudes[b]) return magnitudes[a] > magnitudes[b];
    return a < b;  // equal amplitude: prefer the longer period
  });

  std::vector<double> periods(k);
  for (int i = 0; i < k; ++i) {
    const int m = order[i] + 1;  // bin index is 1-based
    periods[i] = static_cast<double>(n) / m;
  }
  return periods;
}

DomainIndex domain_index(std::span<const double> context, int k) {
  const int n = static_cast<int>(context.size());
  const auto mags = dft_magnitudes(context);
  const auto periods = top_k_periods(mags, n, k);

  DomainIndex idx;
  idx.k = k;
  idx.periods_normalized.resize(k);
  for (int i = 0; i < k; ++i) idx.periods_normalized[i] = periods[i] / n;
  return idx;
}

}  // namespace cfa::spectral
