#include "cmet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cmet/error.hpp"

namespace cmet {

namespace {

void check_support(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::SupportMismatch,
                "distributions on supports of size " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
}

}  // namespace

double hellinger(std::span<const double> p, std::span<const double> q) {
  check_support(p, q);
  double bc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) bc += std::sqrt(std::max(p[i], 0.0) * std::max(q[i], 0.0));
  return std::sqrt(std::clamp(1.0 - bc, 0.0, 1.0));
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  check_support(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double bimodality_coefficient(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  if (samples.size() < 4) throw Error(ErrorKind::InvalidArgument, "bimodality needs at least 4 samples");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : samples) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 1e-300) || m2 <= 1e-24 * std::max(1.0, mean * mean)) {
    throw Error(ErrorKind::DegenerateVariance, "all samples are equal");
  }
  const double b1 = m3 / std::pow(m2, 1.5);
  const double b2 = m4 / (m2 * m2) - 3.0;
  const double g1 = b1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
  const double g2 = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * b2 + 6.0);
  return (g1 * g1 + 1.0) / (g2 + 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)));
}

Histogram2D Histogram2D::from_weights(std::size_t a, std::size_t b, std::size_t rows, std::size_t cols,
                                      std::vector<double> weights) {
  if (weights.size() != rows * cols) throw Error(ErrorKind::ShapeMismatch, "histogram weights do not fit the grid");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw Error(ErrorKind::InvalidArgument, "negative histogram weight");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::InvalidArgument, "histogram has no mass");
  for (double& w : weights) w /= total;
  return {a, b, rows, cols, std::move(weights)};
}

Histogram2D histogram2d(const TrajectoryEnsemble& ens, std::size_t time_index, std::size_t a, std::size_t b,
                        int max_a, int max_b) {
  if (time_index >= ens.grid.size()) throw Error(ErrorKind::TimeIndexOutOfRange, "time index outside the grid");
  const std::size_t rows = static_cast<std::size_t>(max_a) + 1, cols = static_cast<std::size_t>(max_b) + 1;
  std::vector<double> w(rows * cols, 0.0);
  for (std::size_t traj = 0; traj < ens.n_traj; ++traj) {
    const auto x = ens.at(traj, time_index);
    if (x[a] < 0 || x[a] > max_a || x[b] < 0 || x[b] > max_b) {
      throw Error(ErrorKind::SupportMismatch, "state outside the histogram grid");
    }
    w[static_cast<std::size_t>(x[a]) * cols + static_cast<std::size_t>(x[b])] += 1.0;
  }
  return Histogram2D::from_weights(a, b, rows, cols, std::move(w));
}

int mode_count(const Histogram2D& h, std::size_t window, double floor) {
  const auto R = static_cast<std::ptrdiff_t>(h.rows), C = static_cast<std::ptrdiff_t>(h.cols);
  const auto w = static_cast<std::ptrdiff_t>(window);
  std::vector<double> s(h.p.size(), 0.0);
  double peak = 0.0;
  for (std::ptrdiff_t i = 0; i < R; ++i) {
    for (std::ptrdiff_t j = 0; j < C; ++j) {
      double acc = 0.0;
      int n = 0;
      for (std::ptrdiff_t di = -w; di <= w; ++di) {
        for (std::ptrdiff_t dj = -w; dj <= w; ++dj) {
          const std::ptrdiff_t a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= R || b >= C) continue;
          acc += h.p[static_cast<std::size_t>(a * C + b)];
          ++n;
        }
      }
      s[static_cast<std::size_t>(i * C + j)] = acc / n;
      peak = std::max(peak, acc / n);
    }
  }
  int modes = 0;
  for (std::ptrdiff_t i = 0; i < R; ++i) {
    for (std::ptrdiff_t j = 0; j < C; ++j) {
      const double v = s[static_cast<std::size_t>(i * C + j)];
      if (!(v > floor * peak) || v <= 0.0) continue;
      bool is_max = true;
      for (std::ptrdiff_t di = -1; di <= 1 && is_max; ++di) {
        for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
          const std::ptrdiff_t a = i + di, b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= R || b >= C) continue;
          const double u = s[static_cast<std::size_t>(a * C + b)];
          const bool earlier = a < i || (a == i && b < j);
          if (earlier ? u >= v : u > v) {
            is_max = false;
            break;
          }
        }
      }
      modes += is_max ? 1 : 0;
    }
  }
  return modes;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(12);
  out << "metric,context,value\n";
  for (const MetricRow& r : rows) out << r.metric << ",\"" << r.context << "\"," << r.value << '\n';
}

}  // namespace cmet
