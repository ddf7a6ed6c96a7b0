#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "klid/dataset.hpp"
#include "klid/kernel.hpp"
#include "klid/random.hpp"

namespace klid {

struct LidConfig {
  int k_neighbors = 20;
  int minibatch_size = 100;
  std::uint64_t seed = 0;
};

inline void validate(const LidConfig& cfg) {
  if (cfg.k_neighbors < 2) throw std::invalid_argument("LidConfig: k_neighbors must be >= 2");
  if (cfg.k_neighbors >= cfg.minibatch_size)
    throw std::invalid_argument("LidConfig: k_neighbors must be < minibatch_size");
}

// Estimates are pinned to this range; degenerate neighborhoods (all
// distances equal) report the cap, which downstream reads as anomalous.
inline constexpr double kLidFloor = 1e-3;
inline constexpr double kLidCap = 1e6;

// Maximum-likelihood LID from a neighborhood distance sample:
//   -( (1/k) * sum_i log(r_i / r_max) )^-1
// over all k distances including r_max itself.
inline double lid_mle(std::span<const double> distances) {
  const std::size_t k = distances.size();
  if (k < 2) throw std::invalid_argument("lid_mle: need at least 2 distances");
  double r_max = 0.0;
  for (double r : distances) {
    if (!(r > 0.0)) throw std::invalid_argument("lid_mle: distances must be > 0");
    r_max = std::max(r_max, r);
  }
  double log_sum = 0.0;
  for (double r : distances) log_sum += std::log(r / r_max);
  if (log_sum == 0.0) return kLidCap;  // all distances equal
  const double est = -static_cast<double>(k) / log_sum;
  return std::clamp(est, kLidFloor, kLidCap);
}

// K-LID: the same estimator over the kernel-induced distance
// t_i = 1/k(x, x_i) - 1, using the k smallest of the candidate distances.
inline double klid_mle(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::MatrixXd>& neighbors, const LidConfig& cfg) {
  validate(cfg);
  if (neighbors.rows() < cfg.k_neighbors)
    throw std::invalid_argument("klid_mle: fewer neighbors than k_neighbors");
  std::vector<double> t(static_cast<std::size_t>(neighbors.rows()));
  for (Eigen::Index i = 0; i < neighbors.rows(); ++i)
    t[static_cast<std::size_t>(i)] =
        kernel_distance_from_sqdist(spec, (neighbors.row(i).transpose() - x).squaredNorm());
  std::partial_sort(t.begin(), t.begin() + cfg.k_neighbors, t.end());
  return lid_mle(std::span<const double>(t.data(), static_cast<std::size_t>(cfg.k_neighbors)));
}

// Per-sample label-conditioned K-LID values. cross_class = in/out is the
// attack-sensitive quantity consumed by the defense.
struct KlidRecord {
  std::int64_t sample_id = 0;
  double in_class = 0.0;
  double out_class = 0.0;
  double cross_class = 0.0;
};

namespace detail {

inline void check_klid_pools(const std::vector<int>& pos, const std::vector<int>& neg,
                             const LidConfig& cfg) {
  if (static_cast<int>(pos.size()) < cfg.k_neighbors + 1 ||
      static_cast<int>(neg.size()) < cfg.k_neighbors + 1)
    throw std::invalid_argument("class_conditional_klid: each class needs k_neighbors + 1 samples");
}

// Rows of one mini-batch: up to minibatch_size entries drawn uniformly
// without replacement from pool minus the excluded row, deterministic in
// the stream seed.
inline std::vector<int> minibatch_rows(const std::vector<int>& pool, int exclude,
                                       int minibatch_size, std::uint64_t stream_seed) {
  std::vector<int> avail;
  avail.reserve(pool.size());
  for (int idx : pool)
    if (idx != exclude) avail.push_back(idx);
  const int m = std::min<int>(minibatch_size, static_cast<int>(avail.size()));
  Rng rng(stream_seed);
  std::vector<int> picked = rng.sample_without_replacement(static_cast<int>(avail.size()), m);
  std::vector<int> rows(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) rows[static_cast<std::size_t>(r)] = avail[static_cast<std::size_t>(picked[static_cast<std::size_t>(r)])];
  return rows;
}

// Record for row i. Mini-batch seeds are derived from the row index, so a
// class-restricted pass yields bit-identical values to the full pass.
inline KlidRecord klid_record_at(const Dataset& ds, const KernelSpec& spec, const LidConfig& cfg,
                                 const std::vector<int>& pos, const std::vector<int>& neg, int i) {
  auto draw_batch = [&](const std::vector<int>& pool, int exclude, std::uint64_t stream) {
    const std::vector<int> rows =
        minibatch_rows(pool, exclude, cfg.minibatch_size, derive_seed(cfg.seed, stream));
    Eigen::MatrixXd batch(static_cast<Eigen::Index>(rows.size()), ds.dim());
    for (std::size_t r = 0; r < rows.size(); ++r)
      batch.row(static_cast<Eigen::Index>(r)) = ds.features.row(rows[r]);
    return batch;
  };

  const int label = ds.labels[static_cast<std::size_t>(i)];
  const std::vector<int>& same = label > 0 ? pos : neg;
  const std::vector<int>& other = label > 0 ? neg : pos;
  const Eigen::VectorXd x = ds.features.row(i).transpose();
  const Eigen::MatrixXd in_batch = draw_batch(same, i, 2 * static_cast<std::uint64_t>(i));
  const Eigen::MatrixXd out_batch = draw_batch(other, -1, 2 * static_cast<std::uint64_t>(i) + 1);
  KlidRecord rec;
  rec.sample_id = ds.ids[static_cast<std::size_t>(i)];
  rec.in_class = klid_mle(spec, x, in_batch, cfg);
  rec.out_class = klid_mle(spec, x, out_batch, cfg);
  rec.cross_class = rec.in_class / rec.out_class;
  return rec;
}

}  // namespace detail

// For every sample: in-class K-LID against a mini-batch of same-label
// samples (self excluded), out-class against a mini-batch of the opposite
// label. One mini-batch per sample per conditioning, drawn uniformly
// without replacement; deterministic in cfg.seed.
inline std::vector<KlidRecord> class_conditional_klid(const Dataset& ds, const KernelSpec& spec,
                                                      const LidConfig& cfg) {
  validate(cfg);
  validate(spec);
  const std::vector<int> pos = detail::class_indices(ds, +1);
  const std::vector<int> neg = detail::class_indices(ds, -1);
  detail::check_klid_pools(pos, neg, cfg);
  std::vector<KlidRecord> out(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i)
    out[static_cast<std::size_t>(i)] = detail::klid_record_at(ds, spec, cfg, pos, neg, i);
  return out;
}

// Restriction to one class, in row order. Values agree exactly with the
// matching entries of the full-dataset pass.
inline std::vector<KlidRecord> class_conditional_klid(const Dataset& ds, const KernelSpec& spec,
                                                      const LidConfig& cfg, int class_label) {
  validate(cfg);
  validate(spec);
  if (class_label != 1 && class_label != -1)
    throw std::invalid_argument("class_conditional_klid: class_label must be +1 or -1");
  const std::vector<int> pos = detail::class_indices(ds, +1);
  const std::vector<int> neg = detail::class_indices(ds, -1);
  detail::check_klid_pools(pos, neg, cfg);
  const std::vector<int>& rows = class_label > 0 ? pos : neg;
  std::vector<KlidRecord> out;
  out.reserve(rows.size());
  for (int i : rows) out.push_back(detail::klid_record_at(ds, spec, cfg, pos, neg, i));
  return out;
}

}  // namespace klid
