#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace klid {

namespace detail {

// Linear-interpolation empirical quantile (numpy default scheme).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Gaussian kernel density estimate over scalar samples.
struct Density {
  std::vector<double> sample_points;
  double bandwidth = 1.0;

  double operator()(double x) const {
    const double inv_h = 1.0 / bandwidth;
    const double norm = 0.3989422804014327 * inv_h / static_cast<double>(sample_points.size());
    double acc = 0.0;
    for (double p : sample_points) {
      const double z = (x - p) * inv_h;
      acc += std::exp(-0.5 * z * z);
    }
    return norm * acc;
  }

  double support_min() const { return *std::min_element(sample_points.begin(), sample_points.end()); }
  double support_max() const { return *std::max_element(sample_points.begin(), sample_points.end()); }
};

// Fits a Gaussian KDE. Default bandwidth is Silverman's rule
// h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5), floored at 1e-6 times the
// data range (or 1e-6 when the range collapses) so identical values still
// produce a finite, narrow bump.
inline Density kde_fit(std::span<const double> values, double bandwidth = 0.0) {
  if (values.size() < 2) throw std::invalid_argument("kde_fit: need at least 2 values");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("kde_fit: non-finite value");
  Density d;
  d.sample_points.assign(values.begin(), values.end());
  if (bandwidth > 0.0) {
    d.bandwidth = bandwidth;
    return d;
  }
  std::vector<double> sorted = d.sample_points;
  std::sort(sorted.begin(), sorted.end());
  const double range = sorted.back() - sorted.front();
  const double floor = 1e-6 * (range > 0.0 ? range : 1.0);
  const double sigma = detail::sample_std(sorted);
  const double iqr = detail::quantile_sorted(sorted, 0.75) - detail::quantile_sorted(sorted, 0.25);
  const double spread = std::min(sigma, iqr / 1.34);
  const double h = 0.9 * spread * std::pow(static_cast<double>(sorted.size()), -0.2);
  d.bandwidth = std::max(h, floor);
  return d;
}

// Discrete KL kernel: sum_i P_i log(P_i / Q_i) over probability vectors.
inline double kl_divergence_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("kl_divergence_discrete: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

// KL divergence between two fitted densities by grid discretization: both
// are evaluated on a shared uniform grid spanning the union of supports
// plus 3 bandwidths, floored at 1e-12 and renormalized to probability
// vectors before the discrete sum.
inline double kl_divergence(const Density& p, const Density& q, int grid_size = 512) {
  if (grid_size < 64) throw std::invalid_argument("kl_divergence: grid_size must be >= 64");
  const double lo = std::min(p.support_min() - 3.0 * p.bandwidth, q.support_min() - 3.0 * q.bandwidth);
  const double hi = std::max(p.support_max() + 3.0 * p.bandwidth, q.support_max() + 3.0 * q.bandwidth);
  const double step = (hi - lo) / static_cast<double>(grid_size - 1);
  std::vector<double> pv(static_cast<std::size_t>(grid_size)), qv(static_cast<std::size_t>(grid_size));
  double psum = 0.0, qsum = 0.0;
  for (int i = 0; i < grid_size; ++i) {
    const double x = lo + step * static_cast<double>(i);
    pv[static_cast<std::size_t>(i)] = p(x) + 1e-12;
    qv[static_cast<std::size_t>(i)] = q(x) + 1e-12;
    psum += pv[static_cast<std::size_t>(i)];
    qsum += qv[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < grid_size; ++i) {
    pv[static_cast<std::size_t>(i)] /= psum;
    qv[static_cast<std::size_t>(i)] /= qsum;
  }
  return kl_divergence_discrete(pv, qv);
}

}  // namespace klid
