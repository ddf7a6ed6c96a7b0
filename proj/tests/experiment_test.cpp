#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "klid/experiment.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("klid_exp_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

klid::ExperimentConfig small_config() {
  klid::ExperimentConfig cfg;
  cfg.dataset = "synthetic:two_gaussians";
  cfg.synthetic_n = 120;
  cfg.synthetic_noise = 0.8;
  cfg.attack = "flip_random";
  cfg.rates = {0.0, 0.2};
  cfg.defenses = {"svm", "klid-svm", "ls-svm", "ln-svm"};
  cfg.folds = 2;
  cfg.seeds = 1;
  cfg.master_seed = 42;
  return cfg;
}

std::vector<klid::ResultRow> hand_rows() {
  std::vector<klid::ResultRow> rows;
  auto add = [&](const std::string& defense, double rate, int fold, double err,
                 const std::string& status) {
    klid::ResultRow r;
    r.dataset = "toy";
    r.attack = "flip_random";
    r.rate = rate;
    r.defense = defense;
    r.fold = fold;
    r.seed = 0;
    r.status = status;
    r.error_rate = err;
    r.n_support = 5;
    rows.push_back(std::move(r));
  };
  add("svm", 0.1, 0, 0.10, "ok");
  add("svm", 0.1, 1, 0.20, "ok");
  add("svm", 0.2, 0, 0.30, "ok");
  add("ls-svm", 0.1, 0, 0.40, "ok");
  add("ls-svm", 0.2, 0, 0.50, "error: solver blew up");  // must be skipped
  return rows;
}

TEST(ParseRates, InclusiveSweep) {
  const std::vector<double> rates = klid::parse_rates("0:0.3:0.1");
  ASSERT_EQ(rates.size(), 4u);
  EXPECT_DOUBLE_EQ(rates[0], 0.0);
  EXPECT_DOUBLE_EQ(rates[1], 0.1);
  EXPECT_DOUBLE_EQ(rates[2], 0.2);
  EXPECT_DOUBLE_EQ(rates[3], 0.3);  // end point included exactly
}

TEST(ParseRates, CommaListAndErrors) {
  const std::vector<double> rates = klid::parse_rates("0.05, 0.25");
  ASSERT_EQ(rates.size(), 2u);
  EXPECT_DOUBLE_EQ(rates[0], 0.05);
  EXPECT_DOUBLE_EQ(rates[1], 0.25);
  EXPECT_THROW(klid::parse_rates("0:0.3"), std::invalid_argument);
  EXPECT_THROW(klid::parse_rates("0:0.3:0"), std::invalid_argument);
  EXPECT_THROW(klid::parse_rates(""), std::invalid_argument);
  EXPECT_THROW(klid::parse_rates("abc"), std::invalid_argument);
}

TEST(ConfigValidation, RejectsUnknownNamesAndBadRanges) {
  klid::ExperimentConfig cfg = small_config();
  cfg.attack = "mystery";
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.defenses = {"svm", "quantum"};
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.rates = {0.6};
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.folds = 1;
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.seeds = 0;
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.ln_mu = 0.5;
  EXPECT_THROW(klid::validate(cfg), std::invalid_argument);
}

TEST(RunExperiment, ProducesSortedFullGridOfRows) {
  const klid::ExperimentConfig cfg = small_config();
  const std::vector<klid::ResultRow> rows = klid::run_experiment(cfg);
  ASSERT_EQ(rows.size(), 2u * 4u * 2u);  // rates x defenses x folds (one seed)

  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto key = [](const klid::ResultRow& r) {
      return std::tie(r.dataset, r.attack, r.rate, r.defense, r.fold, r.seed);
    };
    EXPECT_TRUE(key(rows[i - 1]) < key(rows[i]) || key(rows[i - 1]) == key(rows[i]));
  }
  int ok = 0;
  for (const klid::ResultRow& r : rows) {
    EXPECT_EQ(r.dataset, cfg.dataset);
    EXPECT_EQ(r.attack, cfg.attack);
    if (r.status.rfind("ok", 0) == 0) ++ok;
    EXPECT_GE(r.error_rate, 0.0);
    EXPECT_LE(r.error_rate, 1.0);
    EXPECT_EQ(r.comm_up, -1);  // centralized rows carry no comm columns
  }
  EXPECT_EQ(ok, static_cast<int>(rows.size()));
}

TEST(RunExperiment, CleanRateKlidMatchesPlainSvm) {
  const klid::ExperimentConfig cfg = small_config();
  const std::vector<klid::ResultRow> rows = klid::run_experiment(cfg);
  for (int fold = 0; fold < cfg.folds; ++fold) {
    double err_svm = -1.0, err_klid = -1.0;
    for (const klid::ResultRow& r : rows) {
      if (r.rate != 0.0 || r.fold != fold) continue;
      if (r.defense == "svm") err_svm = r.error_rate;
      if (r.defense == "klid-svm") err_klid = r.error_rate;
    }
    ASSERT_GE(err_svm, 0.0);
    ASSERT_GE(err_klid, 0.0);
    // no attack signal: the weighting falls back to neutral weights
    EXPECT_NEAR(err_klid, err_svm, 0.02);
  }
}

TEST(RunExperiment, DsvmRowsCarryCommCounts) {
  klid::ExperimentConfig cfg = small_config();
  cfg.defenses = {"svm", "klid-svm"};
  cfg.dsvm_nodes = 2;
  const std::vector<klid::ResultRow> rows = klid::run_experiment(cfg);
  // per cell: 2 centralized rows + 2 distributed rows
  ASSERT_EQ(rows.size(), 2u * 2u * 2u * 2u);

  int dsvm_rows = 0;
  for (const klid::ResultRow& r : rows) {
    if (r.defense.rfind("dsvm-", 0) == 0) {
      ++dsvm_rows;
      EXPECT_TRUE(r.defense == "dsvm-svm" || r.defense == "dsvm-klid-svm");
      if (r.status.rfind("ok", 0) == 0) {
        EXPECT_GE(r.comm_up, 0);
        EXPECT_GE(r.comm_down, 0);
      }
    } else {
      EXPECT_EQ(r.comm_up, -1);
    }
  }
  EXPECT_EQ(dsvm_rows, 2 * 2 * 2);
}

TEST(RunExperiment, ByteIdenticalAcrossReruns) {
  klid::ExperimentConfig cfg = small_config();
  cfg.defenses = {"svm", "klid-svm"};
  const fs::path dir = fresh_dir("rerun");
  const fs::path a = dir / "a.csv";
  const fs::path b = dir / "b.csv";
  klid::emit_csv(klid::run_experiment(cfg), a.string());
  klid::emit_csv(klid::run_experiment(cfg), b.string());
  const std::string sa = slurp(a);
  ASSERT_FALSE(sa.empty());
  EXPECT_EQ(sa, slurp(b));
}

TEST(Csv, EmitLoadRoundTripIncludingSentinels) {
  std::vector<klid::ResultRow> rows = hand_rows();
  rows[4].error_rate = std::numeric_limits<double>::quiet_NaN();  // error row: empty field
  rows[0].comm_up = 123;
  rows[0].comm_down = 456;
  rows[1].gamma_star_pos = 0.03125;
  rows[1].gamma_star_neg = 8.0;

  const fs::path dir = fresh_dir("roundtrip");
  const fs::path path = dir / "results.csv";
  klid::emit_csv(rows, path.string());
  const std::vector<klid::ResultRow> loaded = klid::load_rows(path.string());
  ASSERT_EQ(loaded.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(loaded[i].dataset, rows[i].dataset);
    EXPECT_EQ(loaded[i].attack, rows[i].attack);
    EXPECT_EQ(loaded[i].defense, rows[i].defense);
    EXPECT_EQ(loaded[i].fold, rows[i].fold);
    EXPECT_EQ(loaded[i].seed, rows[i].seed);
    EXPECT_EQ(loaded[i].status, rows[i].status);
    EXPECT_EQ(loaded[i].rate, rows[i].rate);  // exact: shortest round-trip formatting
    EXPECT_EQ(loaded[i].n_support, rows[i].n_support);
    EXPECT_EQ(loaded[i].comm_up, rows[i].comm_up);
    EXPECT_EQ(loaded[i].comm_down, rows[i].comm_down);
    if (std::isnan(rows[i].error_rate)) {
      EXPECT_TRUE(std::isnan(loaded[i].error_rate));
    } else {
      EXPECT_EQ(loaded[i].error_rate, rows[i].error_rate);
    }
    if (std::isnan(rows[i].gamma_star_pos)) {
      EXPECT_TRUE(std::isnan(loaded[i].gamma_star_pos));
    } else {
      EXPECT_EQ(loaded[i].gamma_star_pos, rows[i].gamma_star_pos);
    }
  }
}

TEST(Csv, EmptyRowsGiveHeaderOnlyFile) {
  const fs::path dir = fresh_dir("empty");
  const fs::path path = dir / "results.csv";
  klid::emit_csv({}, path.string());
  EXPECT_EQ(slurp(path), std::string(klid::kResultsHeader) + "\n");
  EXPECT_TRUE(klid::load_rows(path.string()).empty());
}

TEST(Csv, LoadRejectsForeignFiles) {
  const fs::path dir = fresh_dir("reject");
  const fs::path path = dir / "other.csv";
  std::ofstream(path) << "a,b,c\n1,2,3\n";
  try {
    klid::load_rows(path.string());
    FAIL() << "expected a header mismatch error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
  EXPECT_THROW(klid::load_rows((dir / "missing.csv").string()), std::exception);
}

TEST(Summarize, MeansBestFlagAndErrorSkipping) {
  const std::vector<klid::SummaryRow> summary = klid::summarize(hand_rows());

  const klid::SummaryRow* svm_overall = nullptr;
  const klid::SummaryRow* ls_overall = nullptr;
  const klid::SummaryRow* svm_rate01 = nullptr;
  for (const klid::SummaryRow& s : summary) {
    if (s.defense == "svm" && s.overall) svm_overall = &s;
    if (s.defense == "ls-svm" && s.overall) ls_overall = &s;
    if (s.defense == "svm" && !s.overall && s.rate == 0.1) svm_rate01 = &s;
  }
  ASSERT_NE(svm_overall, nullptr);
  ASSERT_NE(ls_overall, nullptr);
  ASSERT_NE(svm_rate01, nullptr);
  EXPECT_NEAR(svm_overall->mean_error, (0.10 + 0.20 + 0.30) / 3.0, 1e-12);
  EXPECT_EQ(svm_overall->n_rows, 3);
  EXPECT_TRUE(svm_overall->best);
  // the ls-svm error row is skipped, leaving only the 0.40 run
  EXPECT_NEAR(ls_overall->mean_error, 0.40, 1e-12);
  EXPECT_EQ(ls_overall->n_rows, 1);
  EXPECT_FALSE(ls_overall->best);
  EXPECT_NEAR(svm_rate01->mean_error, 0.15, 1e-12);
  EXPECT_EQ(svm_rate01->n_rows, 2);

  EXPECT_THROW(klid::summarize({}), std::invalid_argument);
}

TEST(SummaryCsvAndPlot, WriteWellFormedArtifacts) {
  const std::vector<klid::SummaryRow> summary = klid::summarize(hand_rows());
  const fs::path dir = fresh_dir("artifacts");

  const fs::path sum_path = dir / "summary.csv";
  klid::emit_summary_csv(summary, sum_path.string());
  const std::string sum_text = slurp(sum_path);
  EXPECT_NE(sum_text.find("all"), std::string::npos);  // overall rows marked with rate "all"

  const fs::path plot_path = dir / "plot.svg";
  klid::emit_plot(summary, plot_path.string());
  EXPECT_TRUE(testsup::well_formed_xml(plot_path.string()));
  EXPECT_NE(slurp(plot_path).find("<svg"), std::string::npos);

  const fs::path empty_plot = dir / "empty.svg";
  klid::emit_plot({}, empty_plot.string());
  EXPECT_TRUE(testsup::well_formed_xml(empty_plot.string()));
}

TEST(RunExperiment, TinyFoldsFailSoftlyPerRow) {
  klid::ExperimentConfig cfg = small_config();
  cfg.synthetic_n = 16;  // 8-sample training folds: too small for the K-LID pipeline
  cfg.rates = {0.25};
  cfg.defenses = {"svm", "klid-svm"};
  const std::vector<klid::ResultRow> rows = klid::run_experiment(cfg);
  ASSERT_EQ(rows.size(), 4u);
  for (const klid::ResultRow& r : rows) {
    if (r.defense == "svm") {
      EXPECT_EQ(r.status.rfind("ok", 0), 0u) << r.status;
    } else {
      EXPECT_EQ(r.status.rfind("error", 0), 0u) << r.status;
      EXPECT_TRUE(std::isnan(r.error_rate));
    }
  }
}

TEST(RunToDirectory, WritesAllArtifacts) {
  klid::ExperimentConfig cfg = small_config();
  cfg.defenses = {"svm", "ls-svm"};
  const fs::path dir = fresh_dir("full_run");
  cfg.out_dir = (dir / "out").string();

  const std::vector<klid::ResultRow> rows = klid::run_to_directory(cfg);
  ASSERT_EQ(rows.size(), 2u * 2u * 2u);
  for (const char* name : {"results.csv", "timings.csv", "summary.csv", "plot.svg", "metadata.json"})
    EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / name)) << name;

  const std::vector<klid::ResultRow> loaded =
      klid::load_rows((fs::path(cfg.out_dir) / "results.csv").string());
  ASSERT_EQ(loaded.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(loaded[i].defense, rows[i].defense);
    EXPECT_EQ(loaded[i].error_rate, rows[i].error_rate);
  }

  const nlohmann::json meta = nlohmann::json::parse(slurp(fs::path(cfg.out_dir) / "metadata.json"));
  EXPECT_EQ(meta.at("dataset").get<std::string>(), cfg.dataset);
  EXPECT_EQ(meta.at("attack").get<std::string>(), cfg.attack);
  EXPECT_TRUE(testsup::well_formed_xml((fs::path(cfg.out_dir) / "plot.svg").string()));
}

}  // namespace
