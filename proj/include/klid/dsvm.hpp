#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "klid/dataset.hpp"
#include "klid/kernel.hpp"
#include "klid/random.hpp"
#include "klid/svm.hpp"

namespace klid {

struct DsvmConfig {
  int nodes = 5;               // M
  double Z = 10.0;             // penalty weight; the effective coefficient is M*Z
  int rounds_max = 50;
  double convergence_tol = 1e-3;  // on validation-error change per round
  double sv_threshold = 0.0;      // <= 0 resolves to the centralized 1e-8*C
  int sweeps = 5;                 // coordinate-ascent sweeps per node per round
};

inline void validate(const DsvmConfig& cfg) {
  if (cfg.nodes < 1) throw std::invalid_argument("DsvmConfig: nodes must be >= 1");
  if (!(cfg.Z > 0.0)) throw std::invalid_argument("DsvmConfig: Z must be > 0");
  if (cfg.rounds_max < 1) throw std::invalid_argument("DsvmConfig: rounds_max must be >= 1");
  if (!(cfg.convergence_tol >= 0.0)) throw std::invalid_argument("DsvmConfig: convergence_tol must be >= 0");
  if (cfg.sweeps < 1) throw std::invalid_argument("DsvmConfig: sweeps must be >= 1");
}

inline double resolve_sv_threshold(const DsvmConfig& cfg, const SvmConfig& svm_cfg) {
  return cfg.sv_threshold > 0.0 ? cfg.sv_threshold : support_threshold(svm_cfg.C);
}

// One (x, y, alpha) message, tagged with sample id and owning node so the
// fusion center can filter a node's own samples out of its broadcast.
struct SvTriple {
  Eigen::VectorXd x;
  int y = 1;
  double alpha = 0.0;
  double beta = 1.0;
  std::int64_t sample_id = 0;
  int owner = 0;
};

struct NodeState {
  int node_id = 0;
  Dataset shard;
  Eigen::VectorXd alpha_block;
  Eigen::VectorXd beta_block;
  std::vector<SvTriple> received_svs;  // other nodes' support triples, last broadcast
};

struct DsvmRound {
  double objective = 0.0;  // penalized global objective, kernel terms over the SV pool
  double val_error = 0.0;
  long sent_up = 0;
  long sent_down = 0;
};

struct DsvmTrace {
  int nodes = 1;
  double Z = 10.0;
  int n_train = 0;
  bool converged = false;
  std::vector<DsvmRound> rounds;
  long final_sv_count = 0;
  double bias = 0.0;
};

struct CommReport {
  long total_up = 0;
  long total_down = 0;
  long total = 0;
  std::vector<long> up_series;
  std::vector<long> down_series;
  // What a centralized scheme would ship: every point up once, then the
  // model's support vectors down to each node.
  long centralized_baseline = 0;
};

// Random equal split (sizes differ by at most 1) with every shard holding
// both classes; the permutation is redrawn a bounded number of times until
// that holds. Rows keep their original order inside each shard, so M=1
// returns the dataset unchanged.
inline std::vector<Dataset> partition(const Dataset& ds, int nodes, std::uint64_t seed) {
  validate_for_training(ds);
  if (nodes < 1) throw std::invalid_argument("partition: nodes must be >= 1");
  if (ds.n() < nodes) throw std::invalid_argument("partition: fewer samples than nodes");

  Rng rng(seed);
  constexpr int kMaxTries = 100;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    std::vector<int> perm(static_cast<std::size_t>(ds.n()));
    for (int i = 0; i < ds.n(); ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(nodes));
    for (int i = 0; i < ds.n(); ++i) rows[static_cast<std::size_t>(i % nodes)].push_back(perm[static_cast<std::size_t>(i)]);
    bool ok = true;
    for (std::vector<int>& r : rows) {
      std::sort(r.begin(), r.end());
      int pos = 0, neg = 0;
      for (int row : r) (ds.labels[static_cast<std::size_t>(row)] > 0 ? pos : neg)++;
      if (pos == 0 || neg == 0) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    std::vector<Dataset> shards;
    shards.reserve(static_cast<std::size_t>(nodes));
    for (const std::vector<int>& r : rows) shards.push_back(detail::take_rows(ds, r));
    return shards;
  }
  throw std::invalid_argument("partition: could not give every shard both classes");
}

// One node's round: projected cyclic coordinate ascent on its alpha block
// of the penalized objective
//   sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j k(x_i,x_j) - (MZ/2) (sum_i a_i y_i)^2
// holding other nodes' contributions fixed (they enter through
// received_svs and the broadcast global_sum). Each coordinate update is
// the closed-form clipped maximizer of the 1-D quadratic.
inline void node_local_step(NodeState& node, double global_sum, const DsvmConfig& cfg,
                            const SvmConfig& svm_cfg) {
  const int n = node.shard.n();
  const double mz = static_cast<double>(cfg.nodes) * cfg.Z;
  const Eigen::MatrixXd K = gram_matrix(svm_cfg.kernel, node.shard.features, node.shard.features);

  // fixed within the round: other nodes' kernel contribution per own sample
  Eigen::VectorXd fixed = Eigen::VectorXd::Zero(n);
  for (const SvTriple& t : node.received_svs)
    for (int i = 0; i < n; ++i)
      fixed[i] += t.alpha * static_cast<double>(t.y) *
                  kernel_from_sqdist(svm_cfg.kernel, (node.shard.features.row(i).transpose() - t.x).squaredNorm());

  // own-block kernel contribution, maintained incrementally
  Eigen::VectorXd own = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j)
    if (node.alpha_block[j] != 0.0)
      own += node.alpha_block[j] * static_cast<double>(node.shard.labels[static_cast<std::size_t>(j)]) * K.col(j);

  double s = global_sum;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    for (int i = 0; i < n; ++i) {
      const double yi = static_cast<double>(node.shard.labels[static_cast<std::size_t>(i)]);
      const double grad = 1.0 - yi * (own[i] + fixed[i]) - mz * yi * s;
      const double denom = K(i, i) + mz;
      const double top = svm_cfg.C * node.beta_block[i];
      const double a_new = std::clamp(node.alpha_block[i] + grad / denom, 0.0, top);
      const double delta = a_new - node.alpha_block[i];
      if (delta != 0.0) {
        node.alpha_block[i] = a_new;
        s += yi * delta;
        own += delta * yi * K.col(i);
      }
    }
  }
}

namespace detail {

inline double pool_decision_nob(const std::vector<SvTriple>& pool, const KernelSpec& kernel,
                                const Eigen::Ref<const Eigen::VectorXd>& x) {
  double acc = 0.0;
  for (const SvTriple& t : pool)
    acc += t.alpha * static_cast<double>(t.y) * kernel_from_sqdist(kernel, (t.x - x).squaredNorm());
  return acc;
}

// Shared bias: average y - f_nob over unbounded pool SVs, falling back to
// all pool SVs, then to zero.
inline double pool_bias(const std::vector<SvTriple>& pool, const KernelSpec& kernel, double C,
                        double threshold) {
  double sum = 0.0;
  int count = 0;
  for (const SvTriple& t : pool) {
    if (t.alpha < C * t.beta - threshold) {
      sum += static_cast<double>(t.y) - pool_decision_nob(pool, kernel, t.x);
      ++count;
    }
  }
  if (count == 0) {
    for (const SvTriple& t : pool) {
      sum += static_cast<double>(t.y) - pool_decision_nob(pool, kernel, t.x);
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

inline TrainedModel model_from_pool(const std::vector<SvTriple>& pool, const KernelSpec& kernel,
                                    double bias) {
  TrainedModel m;
  m.kernel = kernel;
  m.bias = bias;
  m.converged = true;
  const Eigen::Index rows = static_cast<Eigen::Index>(pool.size());
  m.sv_features.resize(rows, rows > 0 ? pool.front().x.size() : 0);
  m.sv_alpha.resize(rows);
  m.sv_labels.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    m.sv_features.row(static_cast<Eigen::Index>(i)) = pool[i].x.transpose();
    m.sv_alpha[static_cast<Eigen::Index>(i)] = pool[i].alpha;
    m.sv_labels.push_back(pool[i].y);
  }
  return m;
}

}  // namespace detail

// Fusion-center distributed training: per round every node takes a Jacobi
// step from the same broadcast state, sends its support triples up, and
// receives the union of everyone's triples plus the global sum back.
// Terminates when the validation error moves less than convergence_tol in
// a round, or flags the trace non-converged at rounds_max.
inline std::pair<std::vector<TrainedModel>, DsvmTrace> train_distributed(
    const Dataset& ds, const Eigen::VectorXd& beta, const DsvmConfig& cfg, const SvmConfig& svm_cfg,
    const Dataset& validation, std::uint64_t seed) {
  validate(cfg);
  validate(svm_cfg);
  validate_for_training(ds);
  if (beta.size() != ds.n()) throw std::invalid_argument("train_distributed: |beta| != n");
  if (validation.n() == 0) throw std::invalid_argument("train_distributed: empty validation set");
  const double threshold = resolve_sv_threshold(cfg, svm_cfg);

  std::unordered_map<std::int64_t, int> row_of_id;
  for (int i = 0; i < ds.n(); ++i) row_of_id[ds.ids[static_cast<std::size_t>(i)]] = i;

  std::vector<Dataset> shards = partition(ds, cfg.nodes, seed);
  std::vector<NodeState> nodes(shards.size());
  for (std::size_t e = 0; e < shards.size(); ++e) {
    nodes[e].node_id = static_cast<int>(e);
    nodes[e].shard = std::move(shards[e]);
    const int sn = nodes[e].shard.n();
    nodes[e].alpha_block = Eigen::VectorXd::Zero(sn);
    nodes[e].beta_block.resize(sn);
    for (int i = 0; i < sn; ++i)
      nodes[e].beta_block[i] = beta[row_of_id.at(nodes[e].shard.ids[static_cast<std::size_t>(i)])];
  }

  DsvmTrace trace;
  trace.nodes = cfg.nodes;
  trace.Z = cfg.Z;
  trace.n_train = ds.n();

  std::vector<SvTriple> pool;
  double bias = 0.0;
  double prev_err = std::numeric_limits<double>::quiet_NaN();
  double global_sum = 0.0;

  for (int round = 0; round < cfg.rounds_max; ++round) {
    for (NodeState& node : nodes) node_local_step(node, global_sum, cfg, svm_cfg);

    // fusion: collect support triples and the exact global sum
    pool.clear();
    long sent_up = 0;
    double s = 0.0;
    for (const NodeState& node : nodes) {
      for (int i = 0; i < node.shard.n(); ++i) {
        const double a = node.alpha_block[i];
        s += a * static_cast<double>(node.shard.labels[static_cast<std::size_t>(i)]);
        if (a > threshold) {
          SvTriple t;
          t.x = node.shard.features.row(i).transpose();
          t.y = node.shard.labels[static_cast<std::size_t>(i)];
          t.alpha = a;
          t.beta = node.beta_block[i];
          t.sample_id = node.shard.ids[static_cast<std::size_t>(i)];
          t.owner = node.node_id;
          pool.push_back(std::move(t));
          ++sent_up;
        }
      }
    }
    global_sum = s;
    const long sent_down = static_cast<long>(pool.size()) * static_cast<long>(cfg.nodes);
    for (NodeState& node : nodes) {
      node.received_svs.clear();
      for (const SvTriple& t : pool)
        if (t.owner != node.node_id) node.received_svs.push_back(t);
    }

    bias = detail::pool_bias(pool, svm_cfg.kernel, svm_cfg.C, threshold);
    const TrainedModel global_model = detail::model_from_pool(pool, svm_cfg.kernel, bias);
    const double err = error_rate(global_model, validation);

    DsvmRound rec;
    rec.sent_up = sent_up;
    rec.sent_down = sent_down;
    rec.val_error = err;
    double linear = 0.0, quad = 0.0;
    for (const SvTriple& t : pool) linear += t.alpha;
    for (std::size_t a = 0; a < pool.size(); ++a)
      for (std::size_t b = 0; b < pool.size(); ++b)
        quad += pool[a].alpha * pool[b].alpha * static_cast<double>(pool[a].y * pool[b].y) *
                kernel_from_sqdist(svm_cfg.kernel, (pool[a].x - pool[b].x).squaredNorm());
    rec.objective = linear - 0.5 * quad -
                    0.5 * static_cast<double>(cfg.nodes) * cfg.Z * global_sum * global_sum;
    trace.rounds.push_back(rec);

    if (round >= 1 && std::abs(err - prev_err) < cfg.convergence_tol) {
      trace.converged = true;
      prev_err = err;
      break;
    }
    prev_err = err;
  }

  trace.final_sv_count = static_cast<long>(pool.size());
  trace.bias = bias;

  std::vector<TrainedModel> models;
  models.reserve(nodes.size());
  for (const NodeState& node : nodes) {
    TrainedModel m;
    m.kernel = svm_cfg.kernel;
    m.bias = bias;
    m.converged = trace.converged;
    m.alpha = node.alpha_block;
    m.beta = node.beta_block;
    std::vector<SvTriple> expansion;
    for (int i = 0; i < node.shard.n(); ++i) {
      if (node.alpha_block[i] > 0.0) {
        SvTriple t;
        t.x = node.shard.features.row(i).transpose();
        t.y = node.shard.labels[static_cast<std::size_t>(i)];
        t.alpha = node.alpha_block[i];
        t.beta = node.beta_block[i];
        t.sample_id = node.shard.ids[static_cast<std::size_t>(i)];
        t.owner = node.node_id;
        expansion.push_back(std::move(t));
        m.support_ids.push_back(i);
      }
    }
    for (const SvTriple& t : node.received_svs) expansion.push_back(t);
    TrainedModel filled = detail::model_from_pool(expansion, svm_cfg.kernel, bias);
    filled.alpha = m.alpha;
    filled.beta = m.beta;
    filled.support_ids = m.support_ids;
    filled.converged = m.converged;
    if (expansion.empty()) filled.sv_features.resize(0, ds.dim());
    models.push_back(std::move(filled));
  }
  return {std::move(models), std::move(trace)};
}

inline CommReport comm_report(const DsvmTrace& trace) {
  CommReport rep;
  for (const DsvmRound& r : trace.rounds) {
    rep.total_up += r.sent_up;
    rep.total_down += r.sent_down;
    rep.up_series.push_back(r.sent_up);
    rep.down_series.push_back(r.sent_down);
  }
  rep.total = rep.total_up + rep.total_down;
  rep.centralized_baseline =
      static_cast<long>(trace.n_train) + static_cast<long>(trace.nodes) * trace.final_sv_count;
  return rep;
}

}  // namespace klid
