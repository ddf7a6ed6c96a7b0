#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "klid/dataset.hpp"
#include "klid/kernel.hpp"

namespace klid {

struct SvmConfig {
  double C = 1.0;
  KernelSpec kernel{0.5};
  double kkt_tolerance = 1e-3;
  // Stall window multiplier: the solver reports non-convergence after
  // max_passes * n successive pair updates that made no progress.
  int max_passes = 10;
};

inline void validate(const SvmConfig& cfg) {
  if (!(cfg.C > 0.0)) throw std::invalid_argument("SvmConfig: C must be > 0");
  if (!(cfg.kkt_tolerance > 0.0)) throw std::invalid_argument("SvmConfig: kkt_tolerance must be > 0");
  if (cfg.max_passes < 1) throw std::invalid_argument("SvmConfig: max_passes must be >= 1");
  validate(cfg.kernel);
}

inline double support_threshold(double C) { return 1e-8 * C; }

// Trained kernel classifier. alpha/beta run over the full training set;
// the sv_* block is the retained expansion actually used for prediction
// (support vectors only, or every sample for the least-squares variant).
struct TrainedModel {
  Eigen::VectorXd alpha;
  double bias = 0.0;
  std::vector<int> support_ids;
  Eigen::VectorXd beta;
  KernelSpec kernel{0.5};
  Eigen::MatrixXd sv_features;
  std::vector<int> sv_labels;
  Eigen::VectorXd sv_alpha;
  bool converged = true;
};

inline double decision_function(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  double acc = model.bias;
  for (Eigen::Index i = 0; i < model.sv_features.rows(); ++i) {
    const double k = kernel_from_sqdist(model.kernel, (model.sv_features.row(i).transpose() - x).squaredNorm());
    acc += model.sv_alpha[i] * static_cast<double>(model.sv_labels[static_cast<std::size_t>(i)]) * k;
  }
  return acc;
}

// sign(0) -> +1
inline int predict_label(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return decision_function(model, x) >= 0.0 ? +1 : -1;
}

inline double error_rate(const TrainedModel& model, const Dataset& test) {
  if (test.n() == 0) throw std::invalid_argument("error_rate: empty test set");
  int wrong = 0;
  for (int i = 0; i < test.n(); ++i)
    if (predict_label(model, test.features.row(i).transpose()) != test.labels[static_cast<std::size_t>(i)])
      ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(test.n());
}

namespace detail {

// Q_ij = y_i y_j k(x_i, x_j)
inline Eigen::MatrixXd build_q(const Dataset& ds, const KernelSpec& kernel) {
  Eigen::MatrixXd Q = gram_matrix(kernel, ds.features, ds.features);
  for (Eigen::Index i = 0; i < Q.rows(); ++i)
    for (Eigen::Index j = 0; j < Q.cols(); ++j)
      Q(i, j) *= static_cast<double>(ds.labels[static_cast<std::size_t>(i)] * ds.labels[static_cast<std::size_t>(j)]);
  return Q;
}

inline double dual_objective(const Eigen::MatrixXd& Q, const Eigen::VectorXd& alpha) {
  return alpha.sum() - 0.5 * alpha.dot(Q * alpha);
}

// Maximal violating pair gap m(alpha) - M(alpha); <= 0 means KKT-optimal.
inline double kkt_violation(const Eigen::MatrixXd& Q, const std::vector<int>& y,
                            const Eigen::VectorXd& box_top, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd grad = Q * alpha - Eigen::VectorXd::Ones(alpha.size());
  double up = -std::numeric_limits<double>::infinity();
  double low = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < alpha.size(); ++t) {
    const double v = -static_cast<double>(y[static_cast<std::size_t>(t)]) * grad[t];
    const bool in_up = (y[static_cast<std::size_t>(t)] > 0 && alpha[t] < box_top[t]) ||
                       (y[static_cast<std::size_t>(t)] < 0 && alpha[t] > 0.0);
    const bool in_low = (y[static_cast<std::size_t>(t)] > 0 && alpha[t] > 0.0) ||
                        (y[static_cast<std::size_t>(t)] < 0 && alpha[t] < box_top[t]);
    if (in_up) up = std::max(up, v);
    if (in_low) low = std::min(low, v);
  }
  if (!std::isfinite(up) || !std::isfinite(low)) return 0.0;
  return std::max(0.0, up - low);
}

struct SmoResult {
  Eigen::VectorXd alpha;
  Eigen::VectorXd grad;  // of the minimization form, (Q alpha)_i - 1
  bool converged = true;
  long iterations = 0;
};

// SMO with most-violating-pair selection on
//   min 1/2 a'Qa - e'a  s.t. y'a = 0, 0 <= a_i <= top_i.
// Per-sample upper bounds enter only through the clipping, exactly as
// class-dependent C does in libsvm.
inline SmoResult solve_smo(const Eigen::MatrixXd& Q, const std::vector<int>& y,
                           const Eigen::VectorXd& box_top, double tol, long stall_window,
                           const Eigen::VectorXd* warm_start = nullptr) {
  const Eigen::Index n = Q.rows();
  constexpr double tau = 1e-12;
  SmoResult res;
  res.alpha = Eigen::VectorXd::Zero(n);
  if (warm_start != nullptr && warm_start->size() == n) {
    // Repair the warm start into the feasible set; fall back to zero if
    // the equality constraint cannot be restored.
    Eigen::VectorXd a = warm_start->cwiseMax(0.0).cwiseMin(box_top);
    double r = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) r += a[i] * static_cast<double>(y[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < n && std::abs(r) > 1e-12; ++i) {
      if (static_cast<double>(y[static_cast<std::size_t>(i)]) * r > 0.0 && a[i] > 0.0) {
        const double dec = std::min(a[i], std::abs(r));
        a[i] -= dec;
        r -= static_cast<double>(y[static_cast<std::size_t>(i)]) * dec;
      }
    }
    if (std::abs(r) <= 1e-12) res.alpha = a;
  }
  res.grad = Q * res.alpha - Eigen::VectorXd::Ones(n);

  const long iter_cap = 200 * static_cast<long>(n) + 100000;
  long stalls = 0;
  res.converged = false;
  for (long iter = 0; iter < iter_cap; ++iter) {
    // working-set selection
    int i = -1, j = -1;
    double up = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      const int yt = y[static_cast<std::size_t>(t)];
      const double v = -static_cast<double>(yt) * res.grad[t];
      if (((yt > 0 && res.alpha[t] < box_top[t]) || (yt < 0 && res.alpha[t] > 0.0)) && v > up) {
        up = v;
        i = static_cast<int>(t);
      }
      if (((yt > 0 && res.alpha[t] > 0.0) || (yt < 0 && res.alpha[t] < box_top[t])) && v < low) {
        low = v;
        j = static_cast<int>(t);
      }
    }
    res.iterations = iter;
    if (i < 0 || j < 0 || up - low < tol) {
      res.converged = true;
      break;
    }

    const double old_i = res.alpha[i], old_j = res.alpha[j];
    const int yi = y[static_cast<std::size_t>(i)], yj = y[static_cast<std::size_t>(j)];
    const double top_i = box_top[i], top_j = box_top[j];
    double& ai = res.alpha[i];
    double& aj = res.alpha[j];
    if (yi != yj) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (-res.grad[i] - res.grad[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) { aj = 0.0; ai = diff; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = -diff; }
      }
      if (diff > top_i - top_j) {
        if (ai > top_i) { ai = top_i; aj = top_i - diff; }
      } else {
        if (aj > top_j) { aj = top_j; ai = top_j + diff; }
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (res.grad[i] - res.grad[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > top_i) {
        if (ai > top_i) { ai = top_i; aj = sum - top_i; }
      } else {
        if (aj < 0.0) { aj = 0.0; ai = sum; }
      }
      if (sum > top_j) {
        if (aj > top_j) { aj = top_j; ai = sum - top_j; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = sum; }
      }
    }

    const double di = ai - old_i, dj = aj - old_j;
    if (std::abs(di) + std::abs(dj) < 1e-16 * (1.0 + top_i + top_j)) {
      if (++stalls >= stall_window) break;  // wedged; flagged non-converged
    } else {
      stalls = 0;
    }
    if (di != 0.0 || dj != 0.0) res.grad.noalias() += Q.col(i) * di + Q.col(j) * dj;
  }
  // exact box feasibility at return
  res.alpha = res.alpha.cwiseMax(0.0).cwiseMin(box_top);
  return res;
}

// Bias from the solved problem's gradient: free support vectors vote with
// -y_i g_i, otherwise the midpoint of the KKT-feasible interval.
inline double bias_from_gradient(const Eigen::VectorXd& grad, const std::vector<int>& y,
                                 const Eigen::VectorXd& box_top, const Eigen::VectorXd& alpha,
                                 double eps) {
  double free_sum = 0.0;
  int free_count = 0;
  double lb = -std::numeric_limits<double>::infinity();
  double ub = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    const double cand = -static_cast<double>(yi) * grad[i];
    if (alpha[i] > eps && alpha[i] < box_top[i] - eps) {
      free_sum += cand;
      ++free_count;
    } else if (alpha[i] <= eps) {
      if (yi > 0) lb = std::max(lb, cand); else ub = std::min(ub, cand);
    } else {
      if (yi > 0) ub = std::min(ub, cand); else lb = std::max(lb, cand);
    }
  }
  if (free_count > 0) return free_sum / static_cast<double>(free_count);
  if (std::isfinite(lb) && std::isfinite(ub)) return 0.5 * (lb + ub);
  if (std::isfinite(lb)) return lb;
  if (std::isfinite(ub)) return ub;
  return 0.0;
}

inline TrainedModel assemble_model(const Dataset& ds, const Eigen::VectorXd& beta,
                                   const SvmConfig& cfg, const SmoResult& smo) {
  TrainedModel model;
  model.alpha = smo.alpha;
  model.beta = beta;
  model.kernel = cfg.kernel;
  model.converged = smo.converged;
  const double eps = support_threshold(cfg.C);
  const Eigen::VectorXd box_top = cfg.C * beta.array();
  model.bias = bias_from_gradient(smo.grad, ds.labels, box_top, smo.alpha, eps);
  for (int i = 0; i < ds.n(); ++i)
    if (smo.alpha[i] > eps) model.support_ids.push_back(i);
  model.sv_features.resize(static_cast<Eigen::Index>(model.support_ids.size()), ds.dim());
  model.sv_alpha.resize(static_cast<Eigen::Index>(model.support_ids.size()));
  model.sv_labels.reserve(model.support_ids.size());
  for (std::size_t s = 0; s < model.support_ids.size(); ++s) {
    const int i = model.support_ids[s];
    model.sv_features.row(static_cast<Eigen::Index>(s)) = ds.features.row(i);
    model.sv_labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    model.sv_alpha[static_cast<Eigen::Index>(s)] = smo.alpha[i];
  }
  return model;
}

}  // namespace detail

// Weighted SVM dual (per-sample box tops C * beta_i). beta de-emphasizes
// suspicious samples; beta = 1 everywhere is the standard SVM.
inline TrainedModel train_weighted_svm(const Dataset& ds, const Eigen::VectorXd& beta,
                                       const SvmConfig& cfg,
                                       const Eigen::VectorXd* warm_start = nullptr) {
  validate(cfg);
  validate_for_training(ds);
  if (beta.size() != ds.n()) throw std::invalid_argument("train_weighted_svm: |beta| != n");
  for (Eigen::Index i = 0; i < beta.size(); ++i)
    if (!(beta[i] > 0.0 && beta[i] <= 1.0))
      throw std::invalid_argument("train_weighted_svm: beta must lie in (0, 1]");
  const Eigen::MatrixXd Q = detail::build_q(ds, cfg.kernel);
  const Eigen::VectorXd box_top = cfg.C * beta.array();
  const long stall_window = std::max<long>(1, static_cast<long>(cfg.max_passes) * ds.n());
  const detail::SmoResult smo =
      detail::solve_smo(Q, ds.labels, box_top, cfg.kkt_tolerance, stall_window, warm_start);
  return detail::assemble_model(ds, beta, cfg, smo);
}

inline TrainedModel train_svm(const Dataset& ds, const SvmConfig& cfg) {
  return train_weighted_svm(ds, Eigen::VectorXd::Ones(ds.n()), cfg);
}

// Label-noise-robust SVM: the expected-kernel correction under independent
// flips with probability mu scales every off-diagonal entry by (1-2mu)^2.
inline TrainedModel train_ln_svm(const Dataset& ds, const SvmConfig& cfg, double mu) {
  validate(cfg);
  validate_for_training(ds);
  if (!(mu >= 0.0 && mu < 0.5)) throw std::invalid_argument("train_ln_svm: mu must be in [0, 0.5)");
  Eigen::MatrixXd Q = detail::build_q(ds, cfg.kernel);
  const double factor = (1.0 - 2.0 * mu) * (1.0 - 2.0 * mu);
  for (Eigen::Index i = 0; i < Q.rows(); ++i)
    for (Eigen::Index j = 0; j < Q.cols(); ++j)
      if (i != j) Q(i, j) *= factor;
  const Eigen::VectorXd beta = Eigen::VectorXd::Ones(ds.n());
  const Eigen::VectorXd box_top = cfg.C * beta.array();
  const long stall_window = std::max<long>(1, static_cast<long>(cfg.max_passes) * ds.n());
  const detail::SmoResult smo = detail::solve_smo(Q, ds.labels, box_top, cfg.kkt_tolerance, stall_window);
  return detail::assemble_model(ds, beta, cfg, smo);
}

// Least-squares SVM: solves the saddle system
//   [ 0   y^T        ] [b]   [0]
//   [ y   Omega+I/C  ] [a] = [1]
// with Omega_ij = y_i y_j k(x_i,x_j). Non-sparse: every sample is kept in
// the expansion and alphas may be negative.
inline TrainedModel train_ls_svm(const Dataset& ds, const SvmConfig& cfg) {
  validate(cfg);
  validate_for_training(ds);
  const int n = ds.n();
  const Eigen::MatrixXd Omega = detail::build_q(ds, cfg.kernel);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 1, n + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Ones(n + 1);
  rhs[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    A(0, i + 1) = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
    A(i + 1, 0) = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
  }
  A.block(1, 1, n, n) = Omega;
  A.block(1, 1, n, n).diagonal().array() += 1.0 / cfg.C;

  Eigen::VectorXd sol = A.partialPivLu().solve(rhs);
  double residual = (A * sol - rhs).norm();
  if (!(residual <= 1e-8) || !sol.allFinite()) {
    A.block(1, 1, n, n).diagonal().array() += 1e-10;  // ridge and retry once
    sol = A.partialPivLu().solve(rhs);
    residual = (A * sol - rhs).norm();
    if (!(residual <= 1e-8) || !sol.allFinite())
      throw std::runtime_error("train_ls_svm: singular system, residual " + std::to_string(residual));
  }

  TrainedModel model;
  model.bias = sol[0];
  model.alpha = sol.tail(n);
  model.beta = Eigen::VectorXd::Ones(n);
  model.kernel = cfg.kernel;
  model.converged = true;
  model.support_ids.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) model.support_ids[static_cast<std::size_t>(i)] = i;
  model.sv_features = ds.features;
  model.sv_labels = ds.labels;
  model.sv_alpha = model.alpha;
  return model;
}

}  // namespace klid
