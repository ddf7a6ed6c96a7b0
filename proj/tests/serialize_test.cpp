#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "klid/attacks.hpp"
#include "klid/serialize.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;

fs::path scratch_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "klid_serialize";
  fs::create_directories(dir);
  return dir / name;
}

klid::TrainedModel trained_example() {
  const auto p = testsup::make_problem(30, 3, 1234);
  klid::SvmConfig cfg;
  cfg.C = 1.5;
  cfg.kernel.gamma = 0.7;
  return klid::train_weighted_svm(p.ds, p.beta, cfg);
}

TEST(ModelSerialization, RoundTripIsExact) {
  const klid::TrainedModel model = trained_example();
  const fs::path path = scratch_file("model.json");
  klid::save_model(model, path.string());
  const klid::TrainedModel loaded = klid::load_model(path.string());

  EXPECT_EQ(loaded.kernel.gamma, model.kernel.gamma);
  EXPECT_EQ(loaded.bias, model.bias);
  EXPECT_EQ(loaded.converged, model.converged);
  EXPECT_EQ(loaded.support_ids, model.support_ids);
  EXPECT_EQ(loaded.sv_labels, model.sv_labels);
  ASSERT_EQ(loaded.alpha.size(), model.alpha.size());
  for (Eigen::Index i = 0; i < model.alpha.size(); ++i) EXPECT_EQ(loaded.alpha[i], model.alpha[i]);
  ASSERT_EQ(loaded.beta.size(), model.beta.size());
  for (Eigen::Index i = 0; i < model.beta.size(); ++i) EXPECT_EQ(loaded.beta[i], model.beta[i]);
  ASSERT_EQ(loaded.sv_alpha.size(), model.sv_alpha.size());
  for (Eigen::Index i = 0; i < model.sv_alpha.size(); ++i)
    EXPECT_EQ(loaded.sv_alpha[i], model.sv_alpha[i]);
  ASSERT_EQ(loaded.sv_features.rows(), model.sv_features.rows());
  ASSERT_EQ(loaded.sv_features.cols(), model.sv_features.cols());
  for (Eigen::Index i = 0; i < model.sv_features.rows(); ++i)
    for (Eigen::Index j = 0; j < model.sv_features.cols(); ++j)
      EXPECT_EQ(loaded.sv_features(i, j), model.sv_features(i, j));

  // predictions are bit-identical after the round trip
  const klid::Dataset probe = klid::generate_synthetic(klid::SyntheticKind::two_gaussians, 20, 0.8, 9);
  for (int i = 0; i < probe.n(); ++i)
    EXPECT_EQ(klid::decision_function(loaded, probe.features.row(i).transpose()),
              klid::decision_function(model, probe.features.row(i).transpose()));
}

TEST(ModelSerialization, RejectsUnsupportedVersion) {
  nlohmann::json j = klid::model_to_json(trained_example());
  j["format_version"] = 2;
  EXPECT_THROW(klid::model_from_json(j), std::runtime_error);
  j.erase("format_version");
  EXPECT_THROW(klid::model_from_json(j), std::runtime_error);
}

TEST(ModelSerialization, RejectsCorruptExpansion) {
  nlohmann::json j = klid::model_to_json(trained_example());
  nlohmann::json ragged = j;
  ragged["sv_features"][0].erase(0);  // one row short a column
  EXPECT_THROW(klid::model_from_json(ragged), std::runtime_error);

  nlohmann::json inconsistent = j;
  inconsistent["sv_labels"].erase(0);  // label array shorter than the expansion
  EXPECT_THROW(klid::model_from_json(inconsistent), std::runtime_error);
}

TEST(ModelSerialization, FileErrorsNameThePath) {
  const fs::path missing = scratch_file("does_not_exist.json");
  fs::remove(missing);
  try {
    klid::load_model(missing.string());
    FAIL() << "expected a file-open error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(missing.string()), std::string::npos);
  }

  const fs::path garbage = scratch_file("garbage.json");
  std::ofstream(garbage) << "this is not json";
  try {
    klid::load_model(garbage.string());
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(garbage.string()), std::string::npos);
  }
}

TEST(ProfileSerialization, CarriesPerClassFitParameters) {
  klid::Dataset ds = klid::generate_synthetic(klid::SyntheticKind::two_gaussians, 200, 0.9, 77);
  const klid::AttackResult attack = klid::flip_random(ds, 0.20, 5);
  klid::WeightingConfig cfg;
  cfg.lid.seed = 3;
  const klid::WeightingResult res = klid::compute_weights(attack.dataset, cfg, attack.mask);

  const nlohmann::json j = klid::profile_to_json(res.profile);
  EXPECT_EQ(j.at("mode").get<std::string>(), "oracle");
  for (const char* side : {"positive", "negative"}) {
    const nlohmann::json& cw = j.at(side);
    const klid::ClassWeighting& ref =
        std::string(side) == "positive" ? res.profile.positive : res.profile.negative;
    EXPECT_EQ(cw.at("class_label").get<int>(), ref.class_label);
    EXPECT_EQ(cw.at("gamma_star").get<double>(), ref.gamma_star);
    EXPECT_EQ(cw.at("kl").get<double>(), ref.kl);
    EXPECT_EQ(cw.at("weight_a").get<double>(), ref.weight_fn.a);
    EXPECT_EQ(cw.at("weight_b").get<double>(), ref.weight_fn.b);
    EXPECT_EQ(cw.at("no_signal_fallback").get<bool>(), ref.no_signal_fallback);
    EXPECT_EQ(cw.at("n_records").get<std::size_t>(), ref.records.size());
  }
}

}  // namespace
