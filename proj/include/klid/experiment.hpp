#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "klid/attacks.hpp"
#include "klid/dataset.hpp"
#include "klid/dsvm.hpp"
#include "klid/serialize.hpp"
#include "klid/svm.hpp"
#include "klid/weighting.hpp"

namespace klid {

struct ExperimentConfig {
  std::string dataset = "synthetic:two_gaussians";  // file path or synthetic:<kind>
  int synthetic_n = 400;
  double synthetic_noise = 0.9;
  std::string attack = "alfa";
  std::vector<double> rates = {0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
  std::vector<std::string> defenses = {"svm", "klid-svm", "ls-svm", "ln-svm"};
  WeightingMode mode = WeightingMode::oracle;
  int folds = 5;
  int seeds = 5;
  std::uint64_t master_seed = 42;
  int dsvm_nodes = 0;  // 0 disables the distributed rows
  std::string out_dir;
  int threads = 0;  // 0 = hardware concurrency

  SvmConfig svm{};
  WeightingConfig weighting{};
  double ln_mu = 0.15;
  PoisonParams poison{};
  double cg_lambda = 0.1;
  int cg_max_iters = 100;
  int alfa_iterations = 5;
  int tilt_trials = 20;
  DsvmConfig dsvm{};
};

inline const std::vector<std::string>& known_attacks() {
  static const std::vector<std::string> names = {"none",      "flip_random", "flip_nearest",
                                                 "flip_farfirst", "alfa",        "alfa_tilt",
                                                 "poison_pa", "poison_ra",   "poison_cg"};
  return names;
}

inline const std::vector<std::string>& known_defenses() {
  static const std::vector<std::string> names = {"svm", "klid-svm", "ls-svm", "ln-svm"};
  return names;
}

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) throw std::invalid_argument("ExperimentConfig: dataset is empty");
  if (cfg.rates.empty()) throw std::invalid_argument("ExperimentConfig: no rates");
  for (double r : cfg.rates)
    if (!(r >= 0.0 && r <= 0.5)) throw std::invalid_argument("ExperimentConfig: rates must lie in [0, 0.5]");
  if (cfg.defenses.empty()) throw std::invalid_argument("ExperimentConfig: no defenses");
  for (const std::string& d : cfg.defenses)
    if (std::find(known_defenses().begin(), known_defenses().end(), d) == known_defenses().end())
      throw std::invalid_argument("ExperimentConfig: unknown defense '" + d + "'");
  if (std::find(known_attacks().begin(), known_attacks().end(), cfg.attack) == known_attacks().end())
    throw std::invalid_argument("ExperimentConfig: unknown attack '" + cfg.attack + "'");
  if (cfg.folds < 2) throw std::invalid_argument("ExperimentConfig: folds must be >= 2");
  if (cfg.seeds < 1) throw std::invalid_argument("ExperimentConfig: seeds must be >= 1");
  if (cfg.dsvm_nodes < 0) throw std::invalid_argument("ExperimentConfig: dsvm_nodes must be >= 0");
  validate(cfg.svm);
  validate(cfg.weighting);
  validate(cfg.poison);
  if (!(cfg.ln_mu >= 0.0 && cfg.ln_mu < 0.5))
    throw std::invalid_argument("ExperimentConfig: ln_mu must be in [0, 0.5)");
}

struct ResultRow {
  std::string dataset;
  std::string attack;
  double rate = 0.0;
  std::string defense;
  int fold = 0;
  int seed = 0;
  std::string status = "ok";  // or "error: ..."
  double error_rate = std::numeric_limits<double>::quiet_NaN();
  int n_support = 0;
  long comm_up = -1;    // -1 = centralized row, column left empty
  long comm_down = -1;
  double gamma_star_pos = std::numeric_limits<double>::quiet_NaN();
  double gamma_star_neg = std::numeric_limits<double>::quiet_NaN();
  double runtime_seconds = 0.0;  // reported separately; excluded from results.csv
};

struct SummaryRow {
  std::string dataset;
  std::string attack;
  std::string defense;
  bool overall = false;  // true: mean across every rate; false: one rate
  double rate = 0.0;
  double mean_error = 0.0;
  int n_rows = 0;
  bool best = false;  // overall rows only: lowest mean among defenses
};

namespace detail {

// shortest round-trip decimal form
inline std::string fmt_double(double v) {
  char buf[64];
  const std::to_chars_result r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

inline double parse_double_field(const std::string& s, const std::string& context) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const std::from_chars_result r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw std::runtime_error("CSV parse error in " + context + ": '" + s + "'");
  return v;
}

inline SyntheticKind synthetic_kind_from_name(const std::string& name) {
  if (name == "two_gaussians") return SyntheticKind::two_gaussians;
  if (name == "two_moons") return SyntheticKind::two_moons;
  throw std::invalid_argument("unknown synthetic dataset kind '" + name + "'");
}

}  // namespace detail

// "a:b:step" inclusive sweep or a comma-separated list.
inline std::vector<double> parse_rates(const std::string& spec) {
  std::vector<double> out;
  auto parse_one = [](const std::string& tok) {
    // tolerate spaces around list separators ("0.1, 0.2"); reject
    // anything that is not exactly one number
    const std::string t = detail::trim(tok);
    double v = 0.0;
    const std::from_chars_result r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw std::invalid_argument("parse_rates: bad number '" + tok + "'");
    return v;
  };
  if (spec.find(':') != std::string::npos) {
    std::stringstream ss(spec);
    std::string a, b, c;
    if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') || !std::getline(ss, c))
      throw std::invalid_argument("parse_rates: expected start:end:step");
    const double start = parse_one(a), end = parse_one(b), step = parse_one(c);
    if (!(step > 0.0)) throw std::invalid_argument("parse_rates: step must be > 0");
    for (double r = start; r <= end + 1e-12; r += step) out.push_back(std::min(r, end));
    return out;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_one(tok));
  if (out.empty()) throw std::invalid_argument("parse_rates: empty spec");
  return out;
}

inline std::vector<std::string> parse_list(const std::string& spec) {
  std::vector<std::string> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(detail::trim(tok));
  return out;
}

// Dataset for one seed: synthetic data is regenerated per seed, files are
// reloaded (cheap at desk scale) so every seed sees identical content.
inline Dataset resolve_dataset(const ExperimentConfig& cfg, int seed_index) {
  const std::string prefix = "synthetic:";
  if (cfg.dataset.rfind(prefix, 0) == 0) {
    const SyntheticKind kind = detail::synthetic_kind_from_name(cfg.dataset.substr(prefix.size()));
    return generate_synthetic(kind, cfg.synthetic_n, cfg.synthetic_noise,
                              derive_seed(cfg.master_seed, 11, static_cast<std::uint64_t>(seed_index)));
  }
  const bool csv = cfg.dataset.size() >= 4 && cfg.dataset.substr(cfg.dataset.size() - 4) == ".csv";
  return load_dataset(cfg.dataset, csv ? DataFormat::csv : DataFormat::libsvm);
}

inline AttackResult apply_attack(const ExperimentConfig& cfg, const Dataset& train, double rate,
                                 std::uint64_t seed) {
  const int count = static_cast<int>(std::floor(rate * static_cast<double>(train.n())));
  if (cfg.attack == "none") {
    AttackResult r;
    r.dataset = train;
    r.meta = {"none", seed, {{"rate", rate}}};
    return r;
  }
  if (cfg.attack == "flip_random") return flip_random(train, rate, seed);
  if (cfg.attack == "flip_nearest") return flip_nearest(train, rate, cfg.svm, seed);
  if (cfg.attack == "flip_farfirst") return flip_farfirst(train, rate, cfg.svm, seed);
  if (cfg.attack == "alfa") return alfa(train, rate, cfg.svm, cfg.alfa_iterations, seed);
  if (cfg.attack == "alfa_tilt") return alfa_tilt(train, rate, cfg.svm, cfg.tilt_trials, seed);
  if (cfg.attack == "poison_pa") return poison_pa(train, count, cfg.svm, train, cfg.poison, seed);
  if (cfg.attack == "poison_ra") return poison_ra(train, count, cfg.poison, seed);
  if (cfg.attack == "poison_cg")
    return poison_cg(train, count, cfg.svm, cfg.cg_lambda, cfg.cg_max_iters, seed);
  throw std::invalid_argument("apply_attack: unknown attack '" + cfg.attack + "'");
}

namespace detail {

struct CellKey {
  int seed = 0;
  int fold = 0;
  int rate_index = 0;
};

inline std::uint64_t cell_tag(const CellKey& key) {
  return static_cast<std::uint64_t>(key.fold) * 1024 + static_cast<std::uint64_t>(key.rate_index);
}

inline ResultRow base_row(const ExperimentConfig& cfg, const CellKey& key, const std::string& defense) {
  ResultRow row;
  row.dataset = sanitize_field(cfg.dataset);
  row.attack = cfg.attack;
  row.rate = cfg.rates[static_cast<std::size_t>(key.rate_index)];
  row.defense = defense;
  row.fold = key.fold;
  row.seed = key.seed;
  return row;
}

// Weights for the klid-svm defense on this (possibly attacked) training
// set; oracle mode consumes the attack's true mask.
inline WeightingResult cell_weights(const ExperimentConfig& cfg, const CellKey& key,
                                    const AttackResult& attacked) {
  WeightingConfig wcfg = cfg.weighting;
  wcfg.lid.seed = derive_seed(cfg.master_seed, 19, static_cast<std::uint64_t>(key.seed), cell_tag(key));
  if (cfg.mode == WeightingMode::oracle) return compute_weights(attacked.dataset, wcfg, attacked.mask);
  return compute_weights_self_sim(attacked.dataset, wcfg);
}

inline std::vector<ResultRow> run_cell(const ExperimentConfig& cfg, const CellKey& key,
                                       const Dataset& train_raw, const Dataset& test_raw) {
  std::vector<ResultRow> rows;
  const double rate = cfg.rates[static_cast<std::size_t>(key.rate_index)];

  AttackResult attacked;
  Dataset test;
  std::string cell_error;
  try {
    auto [train_s, others, scaler] = standardize(train_raw, {test_raw});
    test = std::move(others.front());
    const std::uint64_t attack_seed =
        derive_seed(cfg.master_seed, 17, static_cast<std::uint64_t>(key.seed), cell_tag(key));
    attacked = apply_attack(cfg, train_s, rate, attack_seed);
  } catch (const std::exception& e) {
    cell_error = std::string("error: ") + e.what();
  }

  // klid-svm weights are shared between the centralized and DSVM rows
  bool weights_ready = false;
  WeightingResult weights;
  auto ensure_weights = [&]() {
    if (!weights_ready) {
      weights = cell_weights(cfg, key, attacked);
      weights_ready = true;
    }
  };

  for (const std::string& defense : cfg.defenses) {
    ResultRow row = base_row(cfg, key, defense);
    const auto t0 = std::chrono::steady_clock::now();
    if (!cell_error.empty()) {
      row.status = sanitize_field(cell_error);
    } else {
      try {
        TrainedModel model;
        if (defense == "svm") {
          model = train_svm(attacked.dataset, cfg.svm);
        } else if (defense == "klid-svm") {
          ensure_weights();
          model = train_weighted_svm(attacked.dataset, weights.beta, cfg.svm);
          row.gamma_star_pos = weights.profile.positive.gamma_star;
          row.gamma_star_neg = weights.profile.negative.gamma_star;
        } else if (defense == "ls-svm") {
          model = train_ls_svm(attacked.dataset, cfg.svm);
        } else if (defense == "ln-svm") {
          model = train_ln_svm(attacked.dataset, cfg.svm, cfg.ln_mu);
        } else {
          throw std::invalid_argument("unknown defense '" + defense + "'");
        }
        row.error_rate = error_rate(model, test);
        row.n_support = static_cast<int>(model.support_ids.size());
        if (!model.converged) row.status = "ok (solver hit iteration cap)";
      } catch (const std::exception& e) {
        row.status = sanitize_field(std::string("error: ") + e.what());
      }
    }
    row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }

  if (cfg.dsvm_nodes > 0) {
    for (const std::string& defense : cfg.defenses) {
      if (defense != "svm" && defense != "klid-svm") continue;  // dual-solver defenses only
      ResultRow row = base_row(cfg, key, "dsvm-" + defense);
      const auto t0 = std::chrono::steady_clock::now();
      if (!cell_error.empty()) {
        row.status = sanitize_field(cell_error);
      } else {
        try {
          Eigen::VectorXd beta = Eigen::VectorXd::Ones(attacked.dataset.n());
          if (defense == "klid-svm") {
            ensure_weights();
            beta = weights.beta;
            row.gamma_star_pos = weights.profile.positive.gamma_star;
            row.gamma_star_neg = weights.profile.negative.gamma_star;
          }
          // carve a validation slice out of the (attacked) training data
          // for the convergence test; it is not used for training
          SplitSpec carve;
          carve.train_fraction = 0.8;
          carve.seed = derive_seed(cfg.master_seed, 23, static_cast<std::uint64_t>(key.seed), cell_tag(key));
          auto [dsvm_train, dsvm_val] = stratified_split(attacked.dataset, carve);
          std::unordered_map<std::int64_t, int> row_of_id;
          for (int i = 0; i < attacked.dataset.n(); ++i) row_of_id[attacked.dataset.ids[static_cast<std::size_t>(i)]] = i;
          Eigen::VectorXd beta_slice(dsvm_train.n());
          for (int i = 0; i < dsvm_train.n(); ++i)
            beta_slice[i] = beta[row_of_id.at(dsvm_train.ids[static_cast<std::size_t>(i)])];

          DsvmConfig dcfg = cfg.dsvm;
          dcfg.nodes = cfg.dsvm_nodes;
          const std::uint64_t part_seed =
              derive_seed(cfg.master_seed, 29, static_cast<std::uint64_t>(key.seed), cell_tag(key));
          auto [models, trace] = train_distributed(dsvm_train, beta_slice, dcfg, cfg.svm, dsvm_val, part_seed);
          const CommReport comm = comm_report(trace);
          row.error_rate = error_rate(models.front(), test);
          row.n_support = static_cast<int>(trace.final_sv_count);
          row.comm_up = comm.total_up;
          row.comm_down = comm.total_down;
          if (!trace.converged) row.status = "ok (dsvm hit round cap)";
        } catch (const std::exception& e) {
          row.status = sanitize_field(std::string("error: ") + e.what());
        }
      }
      row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline bool row_less(const ResultRow& a, const ResultRow& b) {
  return std::tie(a.dataset, a.attack, a.rate, a.defense, a.fold, a.seed) <
         std::tie(b.dataset, b.attack, b.rate, b.defense, b.fold, b.seed);
}

}  // namespace detail

// Full sweep: for every (seed, fold, rate) cell, attack the training fold
// once, then train and score every requested defense on the untouched
// test fold. Cells run in parallel; per-cell seeds are derived from the
// master seed and the cell coordinates, so results do not depend on
// scheduling. Failures are recorded in the row's status, never thrown.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);

  struct SeedData {
    std::vector<std::pair<Dataset, Dataset>> folds;
  };
  std::vector<SeedData> per_seed(static_cast<std::size_t>(cfg.seeds));
  for (int k = 0; k < cfg.seeds; ++k) {
    const Dataset full = resolve_dataset(cfg, k);
    per_seed[static_cast<std::size_t>(k)].folds =
        kfold(full, cfg.folds, derive_seed(cfg.master_seed, 13, static_cast<std::uint64_t>(k)));
  }

  std::vector<detail::CellKey> cells;
  for (int k = 0; k < cfg.seeds; ++k)
    for (int f = 0; f < cfg.folds; ++f)
      for (int r = 0; r < static_cast<int>(cfg.rates.size()); ++r) cells.push_back({k, f, r});

  std::vector<ResultRow> rows;
  std::mutex rows_mutex;
  std::atomic<std::size_t> next{0};
  const unsigned workers = cfg.threads > 0
                               ? static_cast<unsigned>(cfg.threads)
                               : std::max(1u, std::thread::hardware_concurrency());
  auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) return;
      const detail::CellKey key = cells[idx];
      const auto& fold = per_seed[static_cast<std::size_t>(key.seed)].folds[static_cast<std::size_t>(key.fold)];
      std::vector<ResultRow> cell_rows = detail::run_cell(cfg, key, fold.first, fold.second);
      const std::lock_guard<std::mutex> lock(rows_mutex);
      for (ResultRow& r : cell_rows) rows.push_back(std::move(r));
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::sort(rows.begin(), rows.end(), detail::row_less);
  return rows;
}

// Mean error per (dataset, attack, defense): overall across all rates and
// per rate, over rows whose status is not an error. The lowest overall
// mean within each (dataset, attack) group is flagged best.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("summarize: no rows");
  struct Acc {
    double sum = 0.0;
    int n = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> overall;
  std::map<std::tuple<std::string, std::string, std::string, double>, Acc> per_rate;
  for (const ResultRow& r : rows) {
    if (r.status.rfind("error", 0) == 0 || std::isnan(r.error_rate)) continue;
    Acc& a = overall[{r.dataset, r.attack, r.defense}];
    a.sum += r.error_rate;
    a.n += 1;
    Acc& b = per_rate[{r.dataset, r.attack, r.defense, r.rate}];
    b.sum += r.error_rate;
    b.n += 1;
  }

  std::vector<SummaryRow> out;
  std::map<std::pair<std::string, std::string>, double> group_best;
  for (const auto& [key, acc] : overall) {
    const auto& [ds, at, def] = key;
    const double mean = acc.sum / static_cast<double>(acc.n);
    auto it = group_best.find({ds, at});
    if (it == group_best.end() || mean < it->second) group_best[{ds, at}] = mean;
  }
  for (const auto& [key, acc] : overall) {
    const auto& [ds, at, def] = key;
    SummaryRow s;
    s.dataset = ds;
    s.attack = at;
    s.defense = def;
    s.overall = true;
    s.mean_error = acc.sum / static_cast<double>(acc.n);
    s.n_rows = acc.n;
    s.best = s.mean_error == group_best.at({ds, at});
    out.push_back(std::move(s));
  }
  for (const auto& [key, acc] : per_rate) {
    const auto& [ds, at, def, rate] = key;
    SummaryRow s;
    s.dataset = ds;
    s.attack = at;
    s.defense = def;
    s.overall = false;
    s.rate = rate;
    s.mean_error = acc.sum / static_cast<double>(acc.n);
    s.n_rows = acc.n;
    out.push_back(std::move(s));
  }
  return out;
}

inline const char* kResultsHeader =
    "dataset,attack,rate,defense,fold,seed,status,error_rate,n_support,comm_up,comm_down,"
    "gamma_star_pos,gamma_star_neg";

// Deterministic results CSV. Runtime is deliberately not included here —
// it varies run to run; emit_timings_csv carries it.
inline void emit_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_csv: cannot open " + path);
  out << kResultsHeader << "\n";
  for (const ResultRow& r : rows) {
    out << r.dataset << ',' << r.attack << ',' << detail::fmt_double(r.rate) << ',' << r.defense
        << ',' << r.fold << ',' << r.seed << ',' << r.status << ','
        << (std::isnan(r.error_rate) ? "" : detail::fmt_double(r.error_rate)) << ',' << r.n_support
        << ',' << (r.comm_up < 0 ? "" : std::to_string(r.comm_up)) << ','
        << (r.comm_down < 0 ? "" : std::to_string(r.comm_down)) << ','
        << (std::isnan(r.gamma_star_pos) ? "" : detail::fmt_double(r.gamma_star_pos)) << ','
        << (std::isnan(r.gamma_star_neg) ? "" : detail::fmt_double(r.gamma_star_neg)) << "\n";
  }
  if (!out) throw std::runtime_error("emit_csv: write failed for " + path);
}

inline void emit_timings_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_timings_csv: cannot open " + path);
  out << "dataset,attack,rate,defense,fold,seed,runtime_seconds\n";
  for (const ResultRow& r : rows)
    out << r.dataset << ',' << r.attack << ',' << detail::fmt_double(r.rate) << ',' << r.defense
        << ',' << r.fold << ',' << r.seed << ',' << detail::fmt_double(r.runtime_seconds) << "\n";
  if (!out) throw std::runtime_error("emit_timings_csv: write failed for " + path);
}

inline std::vector<ResultRow> load_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_rows: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_rows: empty file " + path);
  if (line != kResultsHeader) throw std::runtime_error("load_rows: unexpected header in " + path);
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    while (f.size() < 13) f.emplace_back();  // trailing empty fields
    if (f.size() != 13)
      throw std::runtime_error("load_rows: " + path + ":" + std::to_string(lineno) + ": bad field count");
    const std::string ctx = path + ":" + std::to_string(lineno);
    ResultRow r;
    r.dataset = f[0];
    r.attack = f[1];
    r.rate = detail::parse_double_field(f[2], ctx);
    r.defense = f[3];
    r.fold = static_cast<int>(detail::parse_double_field(f[4], ctx));
    r.seed = static_cast<int>(detail::parse_double_field(f[5], ctx));
    r.status = f[6];
    r.error_rate = detail::parse_double_field(f[7], ctx);
    r.n_support = static_cast<int>(detail::parse_double_field(f[8], ctx));
    r.comm_up = f[9].empty() ? -1 : static_cast<long>(detail::parse_double_field(f[9], ctx));
    r.comm_down = f[10].empty() ? -1 : static_cast<long>(detail::parse_double_field(f[10], ctx));
    r.gamma_star_pos = detail::parse_double_field(f[11], ctx);
    r.gamma_star_neg = detail::parse_double_field(f[12], ctx);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void emit_summary_csv(const std::vector<SummaryRow>& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_summary_csv: cannot open " + path);
  out << "dataset,attack,defense,rate,mean_error,n_rows,best\n";
  for (const SummaryRow& s : summary)
    out << s.dataset << ',' << s.attack << ',' << s.defense << ','
        << (s.overall ? std::string("all") : detail::fmt_double(s.rate)) << ','
        << detail::fmt_double(s.mean_error) << ',' << s.n_rows << ',' << (s.best ? 1 : 0) << "\n";
  if (!out) throw std::runtime_error("emit_summary_csv: write failed for " + path);
}

// Self-contained SVG line chart: mean error vs attack rate, one line per
// defense, for the first (dataset, attack) group present in the summary.
inline void emit_plot(const std::vector<SummaryRow>& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_plot: cannot open " + path);

  auto esc = [](const std::string& s) {
    std::string r;
    for (char c : s) {
      if (c == '&') r += "&amp;";
      else if (c == '<') r += "&lt;";
      else if (c == '>') r += "&gt;";
      else r += c;
    }
    return r;
  };

  std::string dataset, attack;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const SummaryRow& s : summary) {
    if (s.overall) continue;
    if (dataset.empty()) {
      dataset = s.dataset;
      attack = s.attack;
    }
    if (s.dataset != dataset || s.attack != attack) continue;
    series[s.defense].emplace_back(s.rate, s.mean_error);
  }

  const double width = 720, height = 480, ml = 70, mr = 170, mt = 40, mb = 60;
  const double pw = width - ml - mr, ph = height - mt - mb;
  double rate_max = 0.0, err_max = 0.0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    for (auto& [x, y] : pts) {
      rate_max = std::max(rate_max, x);
      err_max = std::max(err_max, y);
    }
  }
  if (rate_max <= 0.0) rate_max = 1.0;
  err_max = std::max(err_max * 1.15, 0.05);
  auto px = [&](double r) { return ml + pw * (r / rate_max); };
  auto py = [&](double e) { return mt + ph * (1.0 - e / err_max); };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"15\">" << esc(dataset) << " / " << esc(attack) << "</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double r = rate_max * t / 5.0, e = err_max * t / 5.0;
    out << "<line x1=\"" << px(r) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(r) << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << px(r) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::fmt_double(std::round(r * 100.0) / 100.0) << "</text>\n";
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(e) << "\" x2=\"" << ml << "\" y2=\"" << py(e)
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << ml - 9 << "\" y=\"" << py(e) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::fmt_double(std::round(e * 1000.0) / 1000.0) << "</text>\n";
  }
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">attack rate</text>\n";
  out << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 "
      << mt + ph / 2 << ")\">mean test error</text>\n";

  const std::vector<std::string> palette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b", "#e377c2"};
  int idx = 0;
  for (const auto& [name, pts] : series) {
    const std::string& color = palette[static_cast<std::size_t>(idx) % palette.size()];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) out << px(x) << ',' << py(y) << ' ';
    out << "\"/>\n";
    for (const auto& [x, y] : pts)
      out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = mt + 16 + 22 * idx;
    out << "<line x1=\"" << ml + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 44 << "\" y2=\""
        << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << ml + pw + 50 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << esc(name) << "</text>\n";
    ++idx;
  }
  if (series.empty())
    out << "<text x=\"" << width / 2 << "\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">no data</text>\n";
  out << "</svg>\n";
  if (!out) throw std::runtime_error("emit_plot: write failed for " + path);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = cfg.dataset;
  j["synthetic_n"] = cfg.synthetic_n;
  j["synthetic_noise"] = cfg.synthetic_noise;
  j["attack"] = cfg.attack;
  j["rates"] = cfg.rates;
  j["defenses"] = cfg.defenses;
  j["mode"] = to_string(cfg.mode);
  j["folds"] = cfg.folds;
  j["seeds"] = cfg.seeds;
  j["master_seed"] = cfg.master_seed;
  j["dsvm_nodes"] = cfg.dsvm_nodes;
  j["svm"] = {{"C", cfg.svm.C}, {"gamma", cfg.svm.kernel.gamma}, {"kkt_tolerance", cfg.svm.kkt_tolerance},
              {"max_passes", cfg.svm.max_passes}};
  j["weighting"] = {{"gamma_grid", cfg.weighting.gamma_grid},
                    {"clip_quantile", cfg.weighting.clip_quantile},
                    {"rho_sim", cfg.weighting.rho_sim},
                    {"lid_k", cfg.weighting.lid.k_neighbors},
                    {"lid_minibatch", cfg.weighting.lid.minibatch_size}};
  j["ln_mu"] = cfg.ln_mu;
  j["poison"] = {{"discount_factor", cfg.poison.discount_factor},
                 {"severity", cfg.poison.severity},
                 {"steps", cfg.poison.steps},
                 {"step_size", cfg.poison.step_size}};
  j["cg_lambda"] = cfg.cg_lambda;
  j["cg_max_iters"] = cfg.cg_max_iters;
  j["alfa_iterations"] = cfg.alfa_iterations;
  j["tilt_trials"] = cfg.tilt_trials;
  j["dsvm"] = {{"Z", cfg.dsvm.Z},
               {"rounds_max", cfg.dsvm.rounds_max},
               {"convergence_tol", cfg.dsvm.convergence_tol},
               {"sweeps", cfg.dsvm.sweeps}};
  return j;
}

// Run the sweep and write results.csv, timings.csv, summary.csv, plot.svg
// and metadata.json into cfg.out_dir. Returns the rows.
inline std::vector<ResultRow> run_to_directory(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("run_to_directory: out_dir is empty");
  std::filesystem::create_directories(cfg.out_dir);
  const std::vector<ResultRow> rows = run_experiment(cfg);
  const std::filesystem::path dir(cfg.out_dir);
  emit_csv(rows, (dir / "results.csv").string());
  emit_timings_csv(rows, (dir / "timings.csv").string());
  const std::vector<SummaryRow> summary = summarize(rows);
  emit_summary_csv(summary, (dir / "summary.csv").string());
  emit_plot(summary, (dir / "plot.svg").string());
  std::ofstream meta((dir / "metadata.json").string());
  if (!meta) throw std::runtime_error("run_to_directory: cannot write metadata.json");
  meta << config_to_json(cfg).dump(2) << "\n";
  return rows;
}

}  // namespace klid
