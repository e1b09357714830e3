#pragma once

#include <span>
#include <vector>

namespace cfa::spectral {

// Continuous domain index of a context window: the top-k DFT period
// lengths, normalized by the window length so every label lies in (0, 1].
// Entries are ordered by descending source amplitude.
struct DomainIndex {
  std::vector<double> periods_normalized;
  int k = 0;
};

// Magnitudes |X_m| for bins m = 1..floor(n/2) of the mean-removed window.
// The DC bin is excluded. Requires n >= 4.
std::vector<double> dft_magnitudes(std::span<const double> window);

// Periods n/m for the k bins with largest magnitude, in descending
// magnitude order. Ties break toward smaller m (the longer period).
// Requires 1 <= k <= magnitudes.size().
std::vector<double> top_k_periods(std::span<const double> magnitudes,
                                  int n, int k);

// domain_index = top_k_periods(dft_magnitudes(context)) / context length.
DomainIndex domain_index(std::span<const double> context, int k);

}  // namespace cfa::spectral
