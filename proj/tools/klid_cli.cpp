// Command-line front end: run experiment sweeps, summarize result files,
// generate synthetic datasets, and train/apply single models.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "klid/klid.hpp"

namespace {

klid::WeightingMode parse_mode(const std::string& s) {
  if (s == "oracle") return klid::WeightingMode::oracle;
  if (s == "self-simulated" || s == "self_simulated") return klid::WeightingMode::self_simulated;
  throw CLI::ValidationError("--mode", "expected 'oracle' or 'self-simulated'");
}

int cmd_run(const klid::ExperimentConfig& cfg) {
  const std::vector<klid::ResultRow> rows = klid::run_to_directory(cfg);
  int errors = 0;
  for (const klid::ResultRow& r : rows)
    if (r.status.rfind("error", 0) == 0) ++errors;
  std::cout << "wrote " << rows.size() << " rows to " << cfg.out_dir << " (" << errors
            << " failed cells)\n";
  return errors > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"K-LID weighted SVM toolkit: poisoning attacks, defenses, and experiment sweeps"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI file");

  // ---- run ----
  klid::ExperimentConfig cfg;
  std::string rates_spec = "0:0.30:0.05";
  std::string defenses_spec = "svm,klid-svm,ls-svm,ln-svm";
  std::string mode_spec = "oracle";
  CLI::App* run = app.add_subcommand("run", "Run a full attack-rate sweep and write result files");
  run->add_option("--dataset", cfg.dataset, "Data file (.csv or libsvm) or synthetic:<kind>")
      ->capture_default_str();
  run->add_option("--synthetic-n", cfg.synthetic_n, "Sample count for synthetic data")->capture_default_str();
  run->add_option("--synthetic-noise", cfg.synthetic_noise, "Noise level for synthetic data")
      ->capture_default_str();
  run->add_option("--attack", cfg.attack, "Attack name")->capture_default_str();
  run->add_option("--rates", rates_spec, "Attack rates: start:end:step or comma list")->capture_default_str();
  run->add_option("--defenses", defenses_spec, "Comma list of defenses")->capture_default_str();
  run->add_option("--mode", mode_spec, "Weighting mode: oracle or self-simulated")->capture_default_str();
  run->add_option("--folds", cfg.folds, "Cross-validation folds")->capture_default_str();
  run->add_option("--seeds", cfg.seeds, "Number of repetitions with fresh seeds")->capture_default_str();
  run->add_option("--master-seed", cfg.master_seed, "Master seed")->capture_default_str();
  run->add_option("--dsvm-nodes", cfg.dsvm_nodes, "Distributed nodes (0 = off)")->capture_default_str();
  run->add_option("--dsvm-z", cfg.dsvm.Z, "Distributed consensus penalty")->capture_default_str();
  run->add_option("--out", cfg.out_dir, "Output directory")->required();
  run->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
  run->add_option("--C", cfg.svm.C, "SVM cost")->capture_default_str();
  run->add_option("--gamma", cfg.svm.kernel.gamma, "RBF kernel width")->capture_default_str();
  run->add_option("--ln-mu", cfg.ln_mu, "Label-noise robust mu")->capture_default_str();
  run->add_option("--alfa-iters", cfg.alfa_iterations, "ALFA refinement rounds")->capture_default_str();
  run->add_option("--tilt-trials", cfg.tilt_trials, "Tilt attack candidate count")->capture_default_str();
  run->add_option("--cg-lambda", cfg.cg_lambda, "Coordinate-greedy cost weight")->capture_default_str();
  run->add_option("--cg-max-iters", cfg.cg_max_iters, "Coordinate-greedy iterations")->capture_default_str();
  run->add_option("--poison-steps", cfg.poison.steps, "Gradient-ascent steps per poison point")
      ->capture_default_str();
  run->add_option("--poison-step-size", cfg.poison.step_size, "Gradient-ascent step size")
      ->capture_default_str();
  run->add_option("--poison-severity", cfg.poison.severity, "Relocation severity")->capture_default_str();
  run->add_option("--poison-discount", cfg.poison.discount_factor, "Relocation discount factor")
      ->capture_default_str();
  run->add_option("--lid-k", cfg.weighting.lid.k_neighbors, "Neighbors for intrinsic-dimension estimate")
      ->capture_default_str();
  run->add_option("--lid-minibatch", cfg.weighting.lid.minibatch_size, "Minibatch size per estimate")
      ->capture_default_str();
  run->add_option("--clip-quantile", cfg.weighting.clip_quantile, "Ratio clipping quantile")
      ->capture_default_str();
  run->add_option("--rho-sim", cfg.weighting.rho_sim, "Self-simulated flip fraction")->capture_default_str();

  // ---- summarize ----
  std::string sum_results, sum_out, sum_plot;
  CLI::App* summarize = app.add_subcommand("summarize", "Summarize a results.csv file");
  summarize->add_option("--results", sum_results, "Path to results.csv")->required();
  summarize->add_option("--out", sum_out, "Write summary CSV here (default: stdout)");
  summarize->add_option("--plot", sum_plot, "Also write an SVG plot here");

  // ---- gen ----
  std::string gen_kind = "two_gaussians", gen_out, gen_format = "csv";
  int gen_n = 400;
  double gen_noise = 0.9;
  std::uint64_t gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset file");
  gen->add_option("--kind", gen_kind, "two_gaussians or two_moons")->capture_default_str();
  gen->add_option("--n", gen_n, "Sample count (even)")->capture_default_str();
  gen->add_option("--noise", gen_noise, "Noise level")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Seed")->capture_default_str();
  gen->add_option("--format", gen_format, "csv or libsvm")->capture_default_str();
  gen->add_option("--out", gen_out, "Output file")->required();

  // ---- train ----
  std::string train_dataset, train_defense = "klid-svm", train_mode = "self-simulated", train_out;
  double train_C = 1.0, train_gamma = 0.5, train_mu = 0.15, train_rho = 0.10;
  CLI::App* train = app.add_subcommand("train", "Train one model and save it as JSON");
  train->add_option("--dataset", train_dataset, "Data file or synthetic:<kind>")->required();
  train->add_option("--defense", train_defense, "svm, klid-svm, ls-svm or ln-svm")->capture_default_str();
  train->add_option("--mode", train_mode, "Weighting mode for klid-svm")->capture_default_str();
  train->add_option("--C", train_C, "SVM cost")->capture_default_str();
  train->add_option("--gamma", train_gamma, "RBF kernel width")->capture_default_str();
  train->add_option("--ln-mu", train_mu, "Label-noise robust mu")->capture_default_str();
  train->add_option("--rho-sim", train_rho, "Self-simulated flip fraction")->capture_default_str();
  train->add_option("--out", train_out, "Model output path")->required();

  // ---- predict ----
  std::string pred_model, pred_dataset, pred_out;
  CLI::App* predict = app.add_subcommand("predict", "Score a saved model on a dataset");
  predict->add_option("--model", pred_model, "Model JSON path")->required();
  predict->add_option("--dataset", pred_dataset, "Data file or synthetic:<kind>")->required();
  predict->add_option("--out", pred_out, "Write per-sample predictions CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      cfg.rates = klid::parse_rates(rates_spec);
      cfg.defenses = klid::parse_list(defenses_spec);
      cfg.mode = parse_mode(mode_spec);
      return cmd_run(cfg);
    }
    if (summarize->parsed()) {
      const std::vector<klid::ResultRow> rows = klid::load_rows(sum_results);
      const std::vector<klid::SummaryRow> table = klid::summarize(rows);
      if (!sum_plot.empty()) klid::emit_plot(table, sum_plot);
      if (!sum_out.empty()) {
        klid::emit_summary_csv(table, sum_out);
      } else {
        std::printf("%-28s %-14s %-14s %-8s %12s %7s %5s\n", "dataset", "attack", "defense", "rate",
                    "mean_error", "n_rows", "best");
        for (const klid::SummaryRow& s : table)
          std::printf("%-28s %-14s %-14s %-8s %12.4f %7d %5s\n", s.dataset.c_str(), s.attack.c_str(),
                      s.defense.c_str(), s.overall ? "all" : klid::detail::fmt_double(s.rate).c_str(),
                      s.mean_error, s.n_rows, s.best ? "*" : "");
      }
      return 0;
    }
    if (gen->parsed()) {
      const klid::Dataset ds = klid::generate_synthetic(
          klid::detail::synthetic_kind_from_name(gen_kind), gen_n, gen_noise, gen_seed);
      klid::save_dataset(ds, gen_out,
                         gen_format == "csv" ? klid::DataFormat::csv : klid::DataFormat::libsvm);
      std::cout << "wrote " << ds.n() << " samples (" << ds.dim() << " features) to " << gen_out << "\n";
      return 0;
    }
    if (train->parsed()) {
      klid::ExperimentConfig tmp;
      tmp.dataset = train_dataset;
      const klid::Dataset ds = klid::resolve_dataset(tmp, 0);
      klid::SvmConfig scfg;
      scfg.C = train_C;
      scfg.kernel.gamma = train_gamma;
      klid::TrainedModel model;
      if (train_defense == "svm") {
        model = klid::train_svm(ds, scfg);
      } else if (train_defense == "ls-svm") {
        model = klid::train_ls_svm(ds, scfg);
      } else if (train_defense == "ln-svm") {
        model = klid::train_ln_svm(ds, scfg, train_mu);
      } else if (train_defense == "klid-svm") {
        klid::WeightingConfig wcfg;
        wcfg.rho_sim = train_rho;
        if (parse_mode(train_mode) != klid::WeightingMode::self_simulated)
          throw CLI::ValidationError("--mode", "train supports only self-simulated weighting");
        const klid::WeightingResult w = klid::compute_weights_self_sim(ds, wcfg);
        model = klid::train_weighted_svm(ds, w.beta, scfg);
      } else {
        throw CLI::ValidationError("--defense", "unknown defense '" + train_defense + "'");
      }
      klid::save_model(model, train_out);
      std::cout << "trained " << train_defense << " on " << ds.n() << " samples: "
                << model.support_ids.size() << " support vectors, converged="
                << (model.converged ? "yes" : "no") << ", saved to " << train_out << "\n";
      return 0;
    }
    if (predict->parsed()) {
      const klid::TrainedModel model = klid::load_model(pred_model);
      klid::ExperimentConfig tmp;
      tmp.dataset = pred_dataset;
      const klid::Dataset ds = klid::resolve_dataset(tmp, 0);
      if (!pred_out.empty()) {
        std::ofstream out(pred_out);
        if (!out) throw std::runtime_error("cannot open " + pred_out);
        out << "id,label,decision,prediction\n";
        for (int i = 0; i < ds.n(); ++i) {
          const double f = klid::decision_function(model, ds.features.row(i));
          out << ds.ids[static_cast<std::size_t>(i)] << ',' << ds.labels[static_cast<std::size_t>(i)]
              << ',' << klid::detail::fmt_double(f) << ',' << (f >= 0.0 ? 1 : -1) << "\n";
        }
      }
      std::cout << "error rate: " << klid::error_rate(model, ds) << " on " << ds.n() << " samples\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
