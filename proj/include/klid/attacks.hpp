#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "klid/dataset.hpp"
#include "klid/random.hpp"
#include "klid/svm.hpp"

namespace klid {

struct AttackMeta {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
};

// Contaminated dataset plus the exact altered-row mask. Rows outside the
// mask are bit-identical to the input.
struct AttackResult {
  Dataset dataset;
  std::vector<int> mask;
  AttackMeta meta;
};

struct PoisonParams {
  double discount_factor = 0.3;  // C_xi
  double severity = 0.5;         // f_attack
  int steps = 50;
  double step_size = 0.1;
};

inline void validate(const PoisonParams& p) {
  if (!(p.discount_factor >= 0.0 && p.discount_factor <= 1.0))
    throw std::invalid_argument("PoisonParams: discount_factor must be in [0, 1]");
  if (!(p.severity >= 0.0 && p.severity <= 1.0))
    throw std::invalid_argument("PoisonParams: severity must be in [0, 1]");
  if (p.steps < 0) throw std::invalid_argument("PoisonParams: steps must be >= 0");
  if (!(p.step_size > 0.0) || !std::isfinite(p.step_size))
    throw std::invalid_argument("PoisonParams: step_size must be positive and finite");
}

namespace detail {

inline int flip_budget(int n, double rate) {
  if (!(rate >= 0.0 && rate <= 0.5)) throw std::invalid_argument("flip rate must be in [0, 0.5]");
  return static_cast<int>(std::floor(rate * static_cast<double>(n)));
}

inline Dataset with_flipped(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out = ds;
  for (int r : rows) out.labels[static_cast<std::size_t>(r)] = -out.labels[static_cast<std::size_t>(r)];
  return out;
}

inline std::vector<double> decision_values(const TrainedModel& model, const Dataset& ds) {
  std::vector<double> f(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) f[static_cast<std::size_t>(i)] = decision_function(model, ds.features.row(i).transpose());
  return f;
}

inline double hinge(double margin) { return std::max(0.0, 1.0 - margin); }

// Mean hinge loss of the model against the given labels.
inline double hinge_risk(const std::vector<double>& f, const std::vector<int>& labels) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += hinge(static_cast<double>(labels[i]) * f[i]);
  return acc / static_cast<double>(f.size());
}

// Rows ranked by |f|, ties broken by sample id.
inline std::vector<int> rows_by_abs_margin(const Dataset& ds, const std::vector<double>& f, bool ascending) {
  std::vector<int> order(static_cast<std::size_t>(ds.n()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double fa = std::abs(f[static_cast<std::size_t>(a)]);
    const double fb = std::abs(f[static_cast<std::size_t>(b)]);
    if (fa != fb) return ascending ? fa < fb : fa > fb;
    return ds.ids[static_cast<std::size_t>(a)] < ds.ids[static_cast<std::size_t>(b)];
  });
  return order;
}

inline std::vector<int> sorted_mask(std::vector<int> rows) {
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace detail

// Negate L = floor(rate * n) uniformly chosen labels.
inline AttackResult flip_random(const Dataset& ds, double rate, std::uint64_t seed) {
  validate_for_training(ds);
  const int budget = detail::flip_budget(ds.n(), rate);
  Rng rng(seed);
  const std::vector<int> rows = rng.sample_without_replacement(ds.n(), budget);
  AttackResult res;
  res.mask = detail::sorted_mask(rows);
  res.dataset = detail::with_flipped(ds, res.mask);
  res.meta = {"flip_random", seed, {{"rate", rate}, {"budget", budget}}};
  return res;
}

// Flip the samples nearest the clean model's margin (smallest |f|).
inline AttackResult flip_nearest(const Dataset& ds, double rate, const SvmConfig& cfg, std::uint64_t seed) {
  validate_for_training(ds);
  const int budget = detail::flip_budget(ds.n(), rate);
  const TrainedModel clean = train_svm(ds, cfg);
  const std::vector<double> f = detail::decision_values(clean, ds);
  std::vector<int> order = detail::rows_by_abs_margin(ds, f, /*ascending=*/true);
  order.resize(static_cast<std::size_t>(budget));
  AttackResult res;
  res.mask = detail::sorted_mask(order);
  res.dataset = detail::with_flipped(ds, res.mask);
  res.meta = {"flip_nearest", seed, {{"rate", rate}, {"budget", budget}}};
  return res;
}

// Flip the samples farthest from the clean model's margin (largest |f|).
inline AttackResult flip_farfirst(const Dataset& ds, double rate, const SvmConfig& cfg, std::uint64_t seed) {
  validate_for_training(ds);
  const int budget = detail::flip_budget(ds.n(), rate);
  const TrainedModel clean = train_svm(ds, cfg);
  const std::vector<double> f = detail::decision_values(clean, ds);
  std::vector<int> order = detail::rows_by_abs_margin(ds, f, /*ascending=*/false);
  order.resize(static_cast<std::size_t>(budget));
  AttackResult res;
  res.mask = detail::sorted_mask(order);
  res.dataset = detail::with_flipped(ds, res.mask);
  res.meta = {"flip_farfirst", seed, {{"rate", rate}, {"budget", budget}}};
  return res;
}

// Alternating greedy label-flip search: each round retrains on the current
// flips, scores every sample by the hinge-loss gain of flipping it against
// the current model, re-selects the top-L set (an old flip can drop out),
// and keeps the round whose model maximizes hinge risk on the original
// labels.
inline AttackResult alfa(const Dataset& ds, double rate, const SvmConfig& cfg, int iterations,
                         std::uint64_t seed) {
  validate_for_training(ds);
  if (iterations < 1) throw std::invalid_argument("alfa: iterations must be >= 1");
  const int budget = detail::flip_budget(ds.n(), rate);
  AttackResult res;
  res.meta = {"alfa", seed, {{"rate", rate}, {"budget", budget}, {"iterations", iterations}}};
  if (budget == 0) {
    res.dataset = ds;
    res.meta.params["risks"] = nlohmann::json::array();
    return res;
  }

  std::vector<int> current;  // flip set of the round in progress
  std::vector<int> best_mask;
  double best_risk = -std::numeric_limits<double>::infinity();
  std::vector<double> risks;
  for (int round = 0; round < iterations; ++round) {
    const Dataset flipped = detail::with_flipped(ds, current);
    const TrainedModel model = train_svm(flipped, cfg);
    const std::vector<double> f = detail::decision_values(model, ds);

    // risk of this round's model against the original labels
    const double risk = detail::hinge_risk(f, ds.labels);
    risks.push_back(risk);
    if (round > 0 && risk > best_risk) {  // round 0 is the clean model, not an attack iterate
      best_risk = risk;
      best_mask = current;
    }

    std::vector<int> order(static_cast<std::size_t>(ds.n()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      auto gain = [&](int i) {
        const double yf = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]) * f[static_cast<std::size_t>(i)];
        return detail::hinge(yf) - detail::hinge(-yf);
      };
      const double ga = gain(a), gb = gain(b);
      if (ga != gb) return ga > gb;
      return ds.ids[static_cast<std::size_t>(a)] < ds.ids[static_cast<std::size_t>(b)];
    });
    std::vector<int> next(order.begin(), order.begin() + budget);
    next = detail::sorted_mask(std::move(next));
    if (next == current) break;  // flip set stabilized
    current = std::move(next);
  }
  // score the final iterate too
  {
    const Dataset flipped = detail::with_flipped(ds, current);
    const TrainedModel model = train_svm(flipped, cfg);
    const std::vector<double> f = detail::decision_values(model, ds);
    const double risk = detail::hinge_risk(f, ds.labels);
    risks.push_back(risk);
    if (risk > best_risk || best_mask.empty()) {
      best_risk = risk;
      best_mask = current;
    }
  }
  res.mask = best_mask;
  res.dataset = detail::with_flipped(ds, res.mask);
  res.meta.params["risks"] = risks;
  res.meta.params["best_risk"] = best_risk;
  return res;
}

// 1 - Pearson correlation between two decision-value vectors; the
// surrogate "tilt" of the separating surface.
inline double margin_tilt(const std::vector<double>& f_clean, const std::vector<double>& f_cand) {
  if (f_clean.size() != f_cand.size() || f_clean.size() < 2)
    throw std::invalid_argument("margin_tilt: need matched vectors of length >= 2");
  const double n = static_cast<double>(f_clean.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < f_clean.size(); ++i) {
    ma += f_clean[i];
    mb += f_cand[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < f_clean.size(); ++i) {
    const double da = f_clean[i] - ma, db = f_cand[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 1.0;  // a flat surface shares no orientation
  return 1.0 - sab / std::sqrt(saa * sbb);
}

// Randomized flip search scored by margin tilt: candidates are the greedy
// flip set plus random perturbations of it; the candidate whose retrained
// model tilts farthest from the clean model wins.
inline AttackResult alfa_tilt(const Dataset& ds, double rate, const SvmConfig& cfg, int trials,
                              std::uint64_t seed) {
  validate_for_training(ds);
  if (trials < 1) throw std::invalid_argument("alfa_tilt: trials must be >= 1");
  const int budget = detail::flip_budget(ds.n(), rate);
  AttackResult res;
  res.meta = {"alfa_tilt", seed, {{"rate", rate}, {"budget", budget}, {"trials", trials}}};
  if (budget == 0) {
    res.dataset = ds;
    res.meta.params["candidates"] = nlohmann::json::array();
    res.meta.params["tilts"] = nlohmann::json::array();
    return res;
  }

  const TrainedModel clean = train_svm(ds, cfg);
  const std::vector<double> f_clean = detail::decision_values(clean, ds);
  const std::vector<int> greedy = alfa(ds, rate, cfg, 5, derive_seed(seed, 1)).mask;

  Rng rng(derive_seed(seed, 2));
  std::vector<std::vector<int>> candidates;
  candidates.push_back(greedy);
  while (static_cast<int>(candidates.size()) < trials) {
    std::vector<int> cand = greedy;
    std::vector<char> member(static_cast<std::size_t>(ds.n()), 0);
    for (int r : cand) member[static_cast<std::size_t>(r)] = 1;
    const int swaps = 1 + rng.index(std::max(1, budget / 2));
    for (int s = 0; s < swaps && !cand.empty(); ++s) {
      const int out_pos = rng.index(static_cast<int>(cand.size()));
      int in_row = rng.index(ds.n());
      for (int guard = 0; member[static_cast<std::size_t>(in_row)] && guard < ds.n(); ++guard)
        in_row = rng.index(ds.n());
      if (member[static_cast<std::size_t>(in_row)]) continue;  // set is nearly the whole dataset
      member[static_cast<std::size_t>(cand[static_cast<std::size_t>(out_pos)])] = 0;
      member[static_cast<std::size_t>(in_row)] = 1;
      cand[static_cast<std::size_t>(out_pos)] = in_row;
    }
    candidates.push_back(detail::sorted_mask(std::move(cand)));
  }

  double best_tilt = -std::numeric_limits<double>::infinity();
  std::vector<int> best_mask;
  std::vector<double> tilts;
  for (const std::vector<int>& cand : candidates) {
    const Dataset flipped = detail::with_flipped(ds, cand);
    const TrainedModel model = train_svm(flipped, cfg);
    const double tilt = margin_tilt(f_clean, detail::decision_values(model, ds));
    tilts.push_back(tilt);
    if (tilt > best_tilt) {
      best_tilt = tilt;
      best_mask = cand;
    }
  }
  res.mask = best_mask;
  res.dataset = detail::with_flipped(ds, res.mask);
  res.meta.params["candidates"] = candidates;
  res.meta.params["tilts"] = tilts;
  res.meta.params["best_tilt"] = best_tilt;
  return res;
}

// Poisoning by validation-loss ascent: each attack point starts as a
// label-negated copy of a random training point and climbs the validation
// hinge loss via central finite differences, retraining (warm-started)
// for every probe. Accepted steps are strictly improving; features stay
// inside the training bounding box. Points are appended sequentially, so
// later points are optimized against a training set that already contains
// the earlier ones.
inline AttackResult poison_pa(const Dataset& ds, int count, const SvmConfig& cfg,
                              const Dataset& validation, const PoisonParams& params,
                              std::uint64_t seed) {
  validate_for_training(ds);
  validate(params);
  if (ds.n() > 1000) throw std::invalid_argument("poison_pa: n must be <= 1000");
  if (validation.n() == 0) throw std::invalid_argument("poison_pa: validation set is empty");
  if (count < 0) throw std::invalid_argument("poison_pa: count must be >= 0");

  const Eigen::VectorXd box_lo = ds.features.colwise().minCoeff().transpose();
  const Eigen::VectorXd box_hi = ds.features.colwise().maxCoeff().transpose();
  const int d = ds.dim();

  AttackResult res;
  res.meta = {"poison_pa", seed,
              {{"count", count},
               {"steps", params.steps},
               {"step_size", params.step_size},
               {"truncated", false},
               {"loss_traces", nlohmann::json::array()}}};

  Dataset working = ds;
  Rng rng(seed);

  auto project = [&](Eigen::VectorXd x) {
    for (int j = 0; j < d; ++j) x[j] = std::clamp(x[j], box_lo[j], box_hi[j]);
    return x;
  };

  for (int p = 0; p < count; ++p) {
    const int src = rng.index(ds.n());
    Eigen::VectorXd x = ds.features.row(src).transpose();
    const int label = -ds.labels[static_cast<std::size_t>(src)];

    // append the point; its row is optimized in place
    const int row = working.n();
    working.features.conservativeResize(row + 1, d);
    working.features.row(row) = x.transpose();
    working.labels.push_back(label);
    working.ids.push_back(-(static_cast<std::int64_t>(p) + 1));  // synthetic ids for injected points

    // Only the appended row moves between retrains, so keep Q cached and
    // rewrite just that row/column per probe; the solver itself is
    // warm-started from the previous alpha.
    Eigen::MatrixXd Q = detail::build_q(working, cfg.kernel);
    const Eigen::VectorXd beta = Eigen::VectorXd::Ones(working.n());
    const Eigen::VectorXd box_top = cfg.C * beta.array();
    const long stall_window = std::max<long>(1, static_cast<long>(cfg.max_passes) * working.n());
    Eigen::VectorXd warm;

    auto val_loss_at = [&](const Eigen::VectorXd& pt) {
      working.features.row(row) = pt.transpose();
      for (int t = 0; t <= row; ++t) {
        const double k = kernel_from_sqdist(cfg.kernel, (working.features.row(t).transpose() - pt).squaredNorm());
        const double q = k * static_cast<double>(working.labels[static_cast<std::size_t>(t)] * label);
        Q(row, t) = q;
        Q(t, row) = q;
      }
      const detail::SmoResult smo = detail::solve_smo(Q, working.labels, box_top, cfg.kkt_tolerance,
                                                      stall_window, warm.size() > 0 ? &warm : nullptr);
      warm = smo.alpha;
      const TrainedModel m = detail::assemble_model(working, beta, cfg, smo);
      double acc = 0.0;
      for (int i = 0; i < validation.n(); ++i)
        acc += detail::hinge(static_cast<double>(validation.labels[static_cast<std::size_t>(i)]) *
                             decision_function(m, validation.features.row(i).transpose()));
      return acc / static_cast<double>(validation.n());
    };

    double cur_loss = val_loss_at(x);
    std::vector<double> trace{cur_loss};
    double step = params.step_size;
    bool out_of_steps = false;
    for (int s = 0; s < params.steps; ++s) {
      Eigen::VectorXd grad(d);
      for (int j = 0; j < d; ++j) {
        const double eps = std::max(1e-3 * (box_hi[j] - box_lo[j]), 1e-6);
        Eigen::VectorXd hi = x, lo = x;
        hi[j] = std::clamp(hi[j] + eps, box_lo[j], box_hi[j]);
        lo[j] = std::clamp(lo[j] - eps, box_lo[j], box_hi[j]);
        const double width = hi[j] - lo[j];
        grad[j] = width > 0.0 ? (val_loss_at(hi) - val_loss_at(lo)) / width : 0.0;
      }
      const double norm = grad.norm();
      if (!(norm > 1e-12)) break;  // flat: local maximum reached
      bool accepted = false;
      for (double trial = step; trial >= 1e-6 * params.step_size; trial *= 0.5) {
        const Eigen::VectorXd x_try = project(x + (trial / norm) * grad);
        const double loss_try = val_loss_at(x_try);
        if (loss_try > cur_loss) {
          x = x_try;
          cur_loss = loss_try;
          trace.push_back(cur_loss);
          step = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;  // no improving step at any scale
      if (s + 1 == params.steps) out_of_steps = true;
    }
    working.features.row(row) = x.transpose();  // best-so-far position
    res.mask.push_back(row);
    res.meta.params["loss_traces"].push_back(trace);
    if (out_of_steps) res.meta.params["truncated"] = true;
  }
  res.dataset = std::move(working);
  return res;
}

// Restrained perturbation: each chosen malicious-class point moves toward
// its nearest opposite-class neighbor by severity * (1 - discount_factor)
// of the separation, label unchanged.
inline AttackResult poison_ra(const Dataset& ds, int count, const PoisonParams& params,
                              std::uint64_t seed, int malicious_label = -1) {
  validate_for_training(ds);
  validate(params);
  if (malicious_label != 1 && malicious_label != -1)
    throw std::invalid_argument("poison_ra: malicious_label must be +1 or -1");
  const std::vector<int> sources_pool = detail::class_indices(ds, malicious_label);
  const std::vector<int> targets_pool = detail::class_indices(ds, -malicious_label);
  if (count < 0 || count > static_cast<int>(sources_pool.size()))
    throw std::invalid_argument("poison_ra: count exceeds malicious-class size");

  Rng rng(seed);
  const std::vector<int> picked = rng.sample_without_replacement(static_cast<int>(sources_pool.size()), count);
  AttackResult res;
  res.dataset = ds;
  const double move = params.severity * (1.0 - params.discount_factor);
  for (int k : picked) {
    const int i = sources_pool[static_cast<std::size_t>(k)];
    const Eigen::VectorXd x = ds.features.row(i).transpose();
    int best_t = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int t : targets_pool) {
      const double dist = (ds.features.row(t).transpose() - x).squaredNorm();
      if (dist < best_d || (dist == best_d && best_t >= 0 &&
                            ds.ids[static_cast<std::size_t>(t)] < ds.ids[static_cast<std::size_t>(best_t)])) {
        best_d = dist;
        best_t = t;
      }
    }
    const Eigen::VectorXd target = ds.features.row(best_t).transpose();
    res.dataset.features.row(i) = (x + move * (target - x)).transpose();
    res.mask.push_back(i);
  }
  res.mask = detail::sorted_mask(std::move(res.mask));
  res.meta = {"poison_ra", seed,
              {{"count", count},
               {"severity", params.severity},
               {"discount_factor", params.discount_factor},
               {"malicious_label", malicious_label}}};
  return res;
}

// Coordinate-greedy disguise: each chosen malicious point repeatedly picks
// a random coordinate and moves it to the 21-point grid value maximizing
//   U(x') = -y * f_clean(x') - lambda_cost * ||x' - x_original||^2,
// i.e. look benign to the clean model while paying for the modification.
inline AttackResult poison_cg(const Dataset& ds, int count, const SvmConfig& cfg, double lambda_cost,
                              int max_iters, std::uint64_t seed, int malicious_label = -1) {
  validate_for_training(ds);
  if (!(lambda_cost >= 0.0)) throw std::invalid_argument("poison_cg: lambda_cost must be >= 0");
  if (max_iters < 0) throw std::invalid_argument("poison_cg: max_iters must be >= 0");
  if (malicious_label != 1 && malicious_label != -1)
    throw std::invalid_argument("poison_cg: malicious_label must be +1 or -1");
  const std::vector<int> pool = detail::class_indices(ds, malicious_label);
  if (count < 0 || count > static_cast<int>(pool.size()))
    throw std::invalid_argument("poison_cg: count exceeds malicious-class size");

  const TrainedModel clean = train_svm(ds, cfg);
  const Eigen::VectorXd lo = ds.features.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = ds.features.colwise().maxCoeff().transpose();
  const int d = ds.dim();

  Rng rng(seed);
  const std::vector<int> picked = rng.sample_without_replacement(static_cast<int>(pool.size()), count);
  AttackResult res;
  res.dataset = ds;
  res.meta = {"poison_cg", seed,
              {{"count", count},
               {"lambda_cost", lambda_cost},
               {"max_iters", max_iters},
               {"malicious_label", malicious_label},
               {"u_traces", nlohmann::json::array()}}};

  for (int k : picked) {
    const int i = pool[static_cast<std::size_t>(k)];
    const Eigen::VectorXd x_orig = ds.features.row(i).transpose();
    const double y = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
    Eigen::VectorXd x = x_orig;
    auto utility = [&](const Eigen::VectorXd& pt) {
      return -y * decision_function(clean, pt) - lambda_cost * (pt - x_orig).squaredNorm();
    };
    double u_cur = utility(x);
    std::vector<double> trace{u_cur};
    for (int it = 0; it < max_iters; ++it) {
      const int j = rng.index(d);
      double best_v = x[j];
      double best_u = u_cur;
      for (int g = 0; g < 21; ++g) {
        Eigen::VectorXd x_try = x;
        x_try[j] = lo[j] + (hi[j] - lo[j]) * static_cast<double>(g) / 20.0;
        const double u = utility(x_try);
        if (u > best_u) {
          best_u = u;
          best_v = x_try[j];
        }
      }
      if (best_u > u_cur) {
        x[j] = best_v;
        u_cur = best_u;
        trace.push_back(u_cur);
      }
    }
    res.dataset.features.row(i) = x.transpose();
    res.mask.push_back(i);
    res.meta.params["u_traces"].push_back(trace);
  }
  res.mask = detail::sorted_mask(std::move(res.mask));
  return res;
}

}  // namespace klid
