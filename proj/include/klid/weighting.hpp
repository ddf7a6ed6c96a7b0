#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "klid/dataset.hpp"
#include "klid/kernel.hpp"
#include "klid/lid.hpp"
#include "klid/random.hpp"
#include "klid/stats.hpp"

namespace klid {

// Raised when a class has too few attacked (or benign) samples for density
// estimation; callers should switch to self-simulation or accept the
// neutral fallback.
struct InsufficientAttackSignal : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-sample weight as a function of cross-class K-LID:
//   w(z) = 0.55 - 0.45 * tanh(a z - b)
// Monotone in z with range (0.1, 1.0); the sign of a (and hence the
// direction) comes from the least-squares fit, since which side of the
// K-LID scale the attacked samples occupy depends on the data and on
// the selected kernel width.
struct WeightFunction {
  double a = 0.0;
  double b = 0.0;
  int class_label = +1;

  double operator()(double z) const { return 0.55 - 0.45 * std::tanh(a * z - b); }
};

inline std::vector<double> default_gamma_grid() {
  std::vector<double> grid;
  for (int e = -10; e <= 4; ++e) grid.push_back(std::ldexp(1.0, e));
  return grid;
}

enum class WeightingMode { oracle, self_simulated };

inline std::string to_string(WeightingMode m) {
  return m == WeightingMode::oracle ? "oracle" : "self-simulated";
}

struct WeightingConfig {
  std::vector<double> gamma_grid = default_gamma_grid();
  double clip_quantile = 0.95;
  double rho_sim = 0.10;  // fraction of labels flipped for self-simulation
  LidConfig lid{};
};

inline void validate(const WeightingConfig& cfg) {
  if (cfg.gamma_grid.empty()) throw std::invalid_argument("WeightingConfig: empty gamma grid");
  for (double g : cfg.gamma_grid)
    if (!(g > 0.0)) throw std::invalid_argument("WeightingConfig: gamma grid entries must be > 0");
  if (!(cfg.clip_quantile > 0.0 && cfg.clip_quantile <= 1.0))
    throw std::invalid_argument("WeightingConfig: clip_quantile must be in (0, 1]");
  if (!(cfg.rho_sim >= 0.0 && cfg.rho_sim < 0.5))
    throw std::invalid_argument("WeightingConfig: rho_sim must be in [0, 0.5)");
  validate(cfg.lid);
}

struct GammaSearchResult {
  double gamma_star = 0.0;
  double kl = 0.0;
  std::vector<KlidRecord> records;  // class rows, dataset row order, at gamma_star
  Density benign_density;
  Density attacked_density;
};

// One class's fitted pipeline, kept for audit and reuse at predict time.
struct ClassWeighting {
  int class_label = +1;
  double gamma_star = 0.0;
  double kl = 0.0;
  Density benign_density;
  Density attacked_density;
  WeightFunction weight_fn;
  std::vector<KlidRecord> records;
  bool no_signal_fallback = false;
};

struct KLidProfile {
  WeightingMode mode = WeightingMode::oracle;
  ClassWeighting positive;
  ClassWeighting negative;

  const ClassWeighting& for_class(int label) const { return label > 0 ? positive : negative; }
};

struct WeightingResult {
  Eigen::VectorXd beta;
  KLidProfile profile;
};

namespace detail {

inline std::vector<char> attacked_flags(const Dataset& ds, const std::vector<int>& attacked_rows) {
  std::vector<char> flags(static_cast<std::size_t>(ds.n()), 0);
  for (int r : attacked_rows) {
    if (r < 0 || r >= ds.n()) throw std::invalid_argument("attacked mask row out of range");
    flags[static_cast<std::size_t>(r)] = 1;
  }
  return flags;
}

inline std::vector<double> cross_values(const std::vector<KlidRecord>& records) {
  std::vector<double> v;
  v.reserve(records.size());
  for (const KlidRecord& r : records) v.push_back(r.cross_class);
  return v;
}

// Two-parameter Nelder-Mead minimization (standard reflection/expansion/
// contraction/shrink coefficients 1, 2, 0.5, 0.5).
inline std::pair<std::array<double, 2>, double> nelder_mead_2d(
    const std::function<double(double, double)>& f, std::array<double, 2> x0, int max_iters) {
  auto eval = [&](const std::array<double, 2>& x) {
    const double v = f(x[0], x[1]);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::array<std::array<double, 2>, 3> xs;
  xs[0] = x0;
  const double d0 = 0.05 * std::max(std::abs(x0[0]), 1.0);
  const double d1 = 0.05 * std::max(std::abs(x0[1]), 1.0);
  xs[1] = {x0[0] + d0, x0[1]};
  xs[2] = {x0[0], x0[1] + d1};
  std::array<double, 3> fs{eval(xs[0]), eval(xs[1]), eval(xs[2])};

  for (int iter = 0; iter < max_iters; ++iter) {
    // order best..worst
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)]; });
    const std::array<std::array<double, 2>, 3> sx{xs[static_cast<std::size_t>(order[0])], xs[static_cast<std::size_t>(order[1])], xs[static_cast<std::size_t>(order[2])]};
    const std::array<double, 3> sf{fs[static_cast<std::size_t>(order[0])], fs[static_cast<std::size_t>(order[1])], fs[static_cast<std::size_t>(order[2])]};
    xs = sx;
    fs = sf;
    const double fspread = std::abs(fs[2] - fs[0]);
    const double xspread = std::max(std::abs(xs[2][0] - xs[0][0]) + std::abs(xs[1][0] - xs[0][0]),
                                    std::abs(xs[2][1] - xs[0][1]) + std::abs(xs[1][1] - xs[0][1]));
    if (fspread < 1e-16 && xspread < 1e-14) break;

    const std::array<double, 2> centroid{0.5 * (xs[0][0] + xs[1][0]), 0.5 * (xs[0][1] + xs[1][1])};
    auto along = [&](double t) {
      return std::array<double, 2>{centroid[0] + t * (xs[2][0] - centroid[0]),
                                   centroid[1] + t * (xs[2][1] - centroid[1])};
    };
    const std::array<double, 2> xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fs[0]) {
      const std::array<double, 2> xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) { xs[2] = xe; fs[2] = fe; } else { xs[2] = xr; fs[2] = fr; }
    } else if (fr < fs[1]) {
      xs[2] = xr;
      fs[2] = fr;
    } else {
      const bool outside = fr < fs[2];
      const std::array<double, 2> xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < std::min(fr, fs[2])) {
        xs[2] = xc;
        fs[2] = fc;
      } else {  // shrink toward best
        for (int k = 1; k < 3; ++k) {
          xs[static_cast<std::size_t>(k)] = {0.5 * (xs[0][0] + xs[static_cast<std::size_t>(k)][0]),
                                             0.5 * (xs[0][1] + xs[static_cast<std::size_t>(k)][1])};
          fs[static_cast<std::size_t>(k)] = eval(xs[static_cast<std::size_t>(k)]);
        }
      }
    }
  }
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (fs[static_cast<std::size_t>(k)] < fs[static_cast<std::size_t>(best)]) best = k;
  return {xs[static_cast<std::size_t>(best)], fs[static_cast<std::size_t>(best)]};
}

}  // namespace detail

// Grid search for the kernel width that best separates benign from
// attacked cross-class K-LID distributions of one class, scored by
// KL(benign || attacked) between the fitted KDEs. Ties break toward the
// smaller gamma.
inline GammaSearchResult select_gamma_star(const Dataset& ds, const std::vector<int>& attacked_rows,
                                           const std::vector<double>& grid, const LidConfig& cfg,
                                           int class_label) {
  validate(cfg);
  if (grid.empty()) throw std::invalid_argument("select_gamma_star: empty grid");
  for (double g : grid)
    if (!(g > 0.0)) throw std::invalid_argument("select_gamma_star: grid entries must be > 0");
  if (class_label != 1 && class_label != -1)
    throw std::invalid_argument("select_gamma_star: class_label must be +1 or -1");

  const std::vector<int> pos = detail::class_indices(ds, +1);
  const std::vector<int> neg = detail::class_indices(ds, -1);
  detail::check_klid_pools(pos, neg, cfg);
  const std::vector<int>& rows = class_label > 0 ? pos : neg;
  const std::vector<char> flags = detail::attacked_flags(ds, attacked_rows);

  int n_attacked = 0;
  for (int r : rows) n_attacked += flags[static_cast<std::size_t>(r)] ? 1 : 0;
  const int n_benign = static_cast<int>(rows.size()) - n_attacked;
  if (n_attacked < 5 || n_benign < 5)
    throw InsufficientAttackSignal(
        "select_gamma_star: class " + std::to_string(class_label) + " has " +
        std::to_string(n_attacked) + " attacked / " + std::to_string(n_benign) +
        " benign samples; need >= 5 of each (use self-simulation)");

  // Mini-batches do not depend on gamma, so draw them once and keep the
  // squared distances; each grid step only re-applies the kernel map.
  struct PerRow {
    std::vector<double> in_sqd;
    std::vector<double> out_sqd;
  };
  std::vector<PerRow> cache(rows.size());
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const int i = rows[s];
    const int label = ds.labels[static_cast<std::size_t>(i)];
    const std::vector<int>& same = label > 0 ? pos : neg;
    const std::vector<int>& other = label > 0 ? neg : pos;
    const std::vector<int> in_rows = detail::minibatch_rows(
        same, i, cfg.minibatch_size, derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i)));
    const std::vector<int> out_rows = detail::minibatch_rows(
        other, -1, cfg.minibatch_size, derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i) + 1));
    const Eigen::VectorXd x = ds.features.row(i).transpose();
    cache[s].in_sqd.reserve(in_rows.size());
    for (int r : in_rows) cache[s].in_sqd.push_back((ds.features.row(r).transpose() - x).squaredNorm());
    cache[s].out_sqd.reserve(out_rows.size());
    for (int r : out_rows) cache[s].out_sqd.push_back((ds.features.row(r).transpose() - x).squaredNorm());
  }

  std::vector<double> sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());

  GammaSearchResult best;
  double best_kl = -std::numeric_limits<double>::infinity();
  std::vector<double> t;
  for (double gamma : sorted_grid) {
    const KernelSpec spec{gamma};
    std::vector<KlidRecord> records(rows.size());
    std::vector<double> ben_vals, att_vals;
    for (std::size_t s = 0; s < rows.size(); ++s) {
      auto klid_of = [&](const std::vector<double>& sqd) {
        t.resize(sqd.size());
        for (std::size_t m = 0; m < sqd.size(); ++m) t[m] = kernel_distance_from_sqdist(spec, sqd[m]);
        std::partial_sort(t.begin(), t.begin() + cfg.k_neighbors, t.end());
        return lid_mle(std::span<const double>(t.data(), static_cast<std::size_t>(cfg.k_neighbors)));
      };
      KlidRecord rec;
      rec.sample_id = ds.ids[static_cast<std::size_t>(rows[s])];
      rec.in_class = klid_of(cache[s].in_sqd);
      rec.out_class = klid_of(cache[s].out_sqd);
      rec.cross_class = rec.in_class / rec.out_class;
      records[s] = rec;
      (flags[static_cast<std::size_t>(rows[s])] ? att_vals : ben_vals).push_back(rec.cross_class);
    }
    const Density ben = kde_fit(ben_vals);
    const Density att = kde_fit(att_vals);
    const double kl = kl_divergence(ben, att);
    if (kl > best_kl) {  // strict: ties keep the earlier (smaller) gamma
      best_kl = kl;
      best.gamma_star = gamma;
      best.kl = kl;
      best.records = std::move(records);
      best.benign_density = ben;
      best.attacked_density = att;
    }
  }
  if (!(best.gamma_star > 0.0)) {  // every KL was NaN; keep the smallest gamma
    best.gamma_star = sorted_grid.front();
    best.kl = 0.0;
    best.records = class_conditional_klid(ds, KernelSpec{best.gamma_star}, cfg, class_label);
    const std::vector<double> vals = detail::cross_values(best.records);
    best.benign_density = kde_fit(vals);
    best.attacked_density = best.benign_density;
  }
  return best;
}

// Lambda_i = p_benign(z_i) / max(p_attacked(z_i), 1e-12).
inline std::vector<double> likelihood_ratios(const std::vector<KlidRecord>& records,
                                             const Density& benign, const Density& attacked) {
  std::vector<double> lrs;
  lrs.reserve(records.size());
  for (const KlidRecord& r : records)
    lrs.push_back(benign(r.cross_class) / std::max(attacked(r.cross_class), 1e-12));
  return lrs;
}

// Clip at the given empirical quantile, then map affinely onto [0.1, 1.0].
// A constant vector (no de-emphasis signal) maps to all-ones.
inline std::vector<double> clip_and_scale(const std::vector<double>& lrs, double clip_quantile = 0.95) {
  if (lrs.empty()) throw std::invalid_argument("clip_and_scale: empty input");
  if (!(clip_quantile > 0.0 && clip_quantile <= 1.0))
    throw std::invalid_argument("clip_and_scale: quantile must be in (0, 1]");
  std::vector<double> sorted = lrs;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = detail::quantile_sorted(sorted, clip_quantile);
  std::vector<double> out = lrs;
  for (double& v : out) v = std::min(v, threshold);
  const auto [mn_it, mx_it] = std::minmax_element(out.begin(), out.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx - mn <= 1e-12 * std::max(1.0, std::abs(mx))) {
    std::fill(out.begin(), out.end(), 1.0);
    return out;
  }
  for (double& v : out) v = 0.1 + 0.9 * (v - mn) / (mx - mn);
  return out;
}

// Least-squares fit of w(z) = 0.55 - 0.45 tanh(a z - b) to the scaled
// likelihood ratios. Derivative-free search from data-scaled starts of
// both slope signs plus damped restarts; a constant-output fallback
// (a = 0) guards against optimizer failure.
inline WeightFunction fit_weight_function(const std::vector<double>& klids,
                                          const std::vector<double>& scaled_lrs, int class_label) {
  if (klids.size() != scaled_lrs.size() || klids.size() < 5)
    throw std::invalid_argument("fit_weight_function: need matched inputs of length >= 5");
  if (class_label != 1 && class_label != -1)
    throw std::invalid_argument("fit_weight_function: class_label must be +1 or -1");

  auto residual = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < klids.size(); ++i) {
      const double w = 0.55 - 0.45 * std::tanh(a * klids[i] - b);
      const double d = w - scaled_lrs[i];
      s += d * d;
    }
    return s;
  };

  std::vector<double> sorted = klids;
  std::sort(sorted.begin(), sorted.end());
  const double spread = detail::sample_std(sorted);
  const double a0 = spread > 1e-12 ? 1.0 / spread : 0.0;
  const double b0 = a0 * detail::quantile_sorted(sorted, 0.5);

  double mean_lr = 0.0;
  for (double v : scaled_lrs) mean_lr += v;
  mean_lr /= static_cast<double>(scaled_lrs.size());
  mean_lr = std::clamp(mean_lr, 0.1, 1.0);
  const double tanh_arg = std::clamp((mean_lr - 0.55) / 0.45, -1.0 + 1e-9, 1.0 - 1e-9);
  const double b_const = std::atanh(tanh_arg);

  std::array<double, 2> best_x{0.0, b_const};
  double best_f = residual(0.0, b_const);
  for (const std::array<double, 2> start :
       {std::array<double, 2>{a0, b0}, std::array<double, 2>{-a0, -b0},
        std::array<double, 2>{a0 / 10.0, b0 / 10.0}, std::array<double, 2>{-a0 / 10.0, -b0 / 10.0}}) {
    const auto [x, f] = detail::nelder_mead_2d(residual, start, 500);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }

  WeightFunction fn;
  fn.a = best_x[0];
  fn.b = best_x[1];
  fn.class_label = class_label;
  if (!std::isfinite(fn.a) || !std::isfinite(fn.b)) {
    fn.a = 0.0;
    fn.b = b_const;
  }
  return fn;
}

namespace detail {

// Pipeline for one class given a gamma search outcome: ratios -> clip and
// scale -> tanh fit -> weights for the class's rows.
inline ClassWeighting finish_class(const GammaSearchResult& search, double clip_quantile,
                                   int class_label, bool fallback) {
  ClassWeighting cw;
  cw.class_label = class_label;
  cw.gamma_star = search.gamma_star;
  cw.kl = search.kl;
  cw.benign_density = search.benign_density;
  cw.attacked_density = search.attacked_density;
  cw.records = search.records;
  cw.no_signal_fallback = fallback;
  const std::vector<double> lrs = likelihood_ratios(search.records, search.benign_density, search.attacked_density);
  const std::vector<double> scaled = clip_and_scale(lrs, clip_quantile);
  cw.weight_fn = fit_weight_function(cross_values(search.records), scaled, class_label);
  return cw;
}

// Neutral search outcome used when a class lacks attack signal: both
// densities equal, so every ratio is 1 and the fitted weights are ~1.
inline GammaSearchResult no_signal_search(const Dataset& ds, const WeightingConfig& cfg, int class_label) {
  GammaSearchResult r;
  r.gamma_star = *std::min_element(cfg.gamma_grid.begin(), cfg.gamma_grid.end());
  r.kl = 0.0;
  r.records = class_conditional_klid(ds, KernelSpec{r.gamma_star}, cfg.lid, class_label);
  r.benign_density = kde_fit(cross_values(r.records));
  r.attacked_density = r.benign_density;
  return r;
}

inline ClassWeighting weight_one_class(const Dataset& density_ds, const std::vector<int>& attacked_rows,
                                       const Dataset& target_ds, const WeightingConfig& cfg,
                                       int class_label) {
  bool fallback = false;
  GammaSearchResult search;
  try {
    search = select_gamma_star(density_ds, attacked_rows, cfg.gamma_grid, cfg.lid, class_label);
  } catch (const InsufficientAttackSignal&) {
    fallback = true;
    search = no_signal_search(target_ds, cfg, class_label);
  }
  if (&density_ds != &target_ds && !fallback) {
    // Densities came from the simulated copy; score the real labels.
    GammaSearchResult on_target;
    on_target.gamma_star = search.gamma_star;
    on_target.kl = search.kl;
    on_target.records = class_conditional_klid(target_ds, KernelSpec{search.gamma_star}, cfg.lid, class_label);
    on_target.benign_density = search.benign_density;
    on_target.attacked_density = search.attacked_density;
    search = std::move(on_target);
  }
  return finish_class(search, cfg.clip_quantile, class_label, fallback);
}

inline WeightingResult assemble_weights(const Dataset& ds, KLidProfile profile) {
  WeightingResult res;
  res.beta = Eigen::VectorXd::Ones(ds.n());
  for (int label : {+1, -1}) {
    const ClassWeighting& cw = profile.for_class(label);
    const std::vector<int> rows = class_indices(ds, label);
    if (rows.size() != cw.records.size())
      throw std::runtime_error("compute_weights: record/row count mismatch");
    for (std::size_t s = 0; s < rows.size(); ++s)
      res.beta[rows[s]] = cw.weight_fn(cw.records[s].cross_class);
  }
  res.profile = std::move(profile);
  return res;
}

}  // namespace detail

// Oracle-mode defense: the true attacked rows are known (grey-box
// evaluation protocol). Returns per-sample weights in [0.1, 1] and the
// full per-class profile.
inline WeightingResult compute_weights(const Dataset& ds, const WeightingConfig& cfg,
                                       const std::vector<int>& oracle_attacked_rows) {
  validate(cfg);
  validate_for_training(ds);
  KLidProfile profile;
  profile.mode = WeightingMode::oracle;
  profile.positive = detail::weight_one_class(ds, oracle_attacked_rows, ds, cfg, +1);
  profile.negative = detail::weight_one_class(ds, oracle_attacked_rows, ds, cfg, -1);
  return detail::assemble_weights(ds, std::move(profile));
}

// Self-simulated defense: no mask is available, so an attack is simulated
// by flipping rho_sim of the labels uniformly at random. The simulated
// copy only feeds density estimation; weights are computed on the given
// labels.
inline WeightingResult compute_weights_self_sim(const Dataset& ds, const WeightingConfig& cfg) {
  validate(cfg);
  validate_for_training(ds);
  const int n = ds.n();
  const int flips = static_cast<int>(std::floor(cfg.rho_sim * static_cast<double>(n)));
  Rng rng(derive_seed(cfg.lid.seed, 0x5e1f51u));
  const std::vector<int> flipped_rows = rng.sample_without_replacement(n, flips);
  Dataset sim = ds;
  for (int r : flipped_rows) sim.labels[static_cast<std::size_t>(r)] = -sim.labels[static_cast<std::size_t>(r)];

  KLidProfile profile;
  profile.mode = WeightingMode::self_simulated;
  profile.positive = detail::weight_one_class(sim, flipped_rows, ds, cfg, +1);
  profile.negative = detail::weight_one_class(sim, flipped_rows, ds, cfg, -1);
  return detail::assemble_weights(ds, std::move(profile));
}

}  // namespace klid
