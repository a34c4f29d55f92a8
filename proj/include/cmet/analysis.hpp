#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmet/ssa.hpp"

namespace cmet {

/// sqrt(1 - sum_i sqrt(p_i q_i)), clamped to [0, 1]. Throws SupportMismatch
/// when the supports differ in size.
double hellinger(std::span<const double> p, std::span<const double> q);

/// Total-variation distance (1/2) sum |p_i - q_i|.
double total_variation(std::span<const double> p, std::span<const double> q);

/// Sarle's sample bimodality coefficient
///   b = (g1^2 + 1) / (g2 + 3 (n-1)^2 / ((n-2)(n-3)))
/// with the bias-corrected sample skewness g1 and excess kurtosis g2.
/// Throws InvalidArgument for n < 4 and DegenerateVariance when all samples
/// are equal.
double bimodality_coefficient(std::span<const double> samples);

/// Normalized joint distribution of a species pair on
/// {0..rows-1} x {0..cols-1}, row-major.
struct Histogram2D {
  std::size_t species_a = 0;
  std::size_t species_b = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> p;

  double at(std::size_t i, std::size_t j) const { return p[i * cols + j]; }
  /// Normalizes non-negative weights; throws InvalidArgument if they sum to 0.
  static Histogram2D from_weights(std::size_t a, std::size_t b, std::size_t rows, std::size_t cols,
                                  std::vector<double> weights);
};

Histogram2D histogram2d(const TrajectoryEnsemble& ens, std::size_t time_index, std::size_t a, std::size_t b,
                        int max_a, int max_b);

/// Number of local maxima of the (2*window+1)^2 box-averaged grid whose value
/// exceeds floor * (grid maximum). Ties are broken in raster order so a flat
/// top counts once.
int mode_count(const Histogram2D& h, std::size_t window, double floor);

struct MetricRow {
  std::string metric;
  std::string context;
  double value = 0.0;
};

/// CSV with header "metric,context,value".
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace cmet
