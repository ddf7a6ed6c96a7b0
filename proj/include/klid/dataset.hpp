#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "klid/random.hpp"

namespace klid {

// Labeled binary-classification data. Labels are canonical {+1, -1};
// ids are stable across splits so partitions can be audited.
struct Dataset {
  Eigen::MatrixXd features;       // n x d
  std::vector<int> labels;        // +1 / -1
  std::vector<std::int64_t> ids;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }

  int count_label(int label) const {
    int c = 0;
    for (int y : labels)
      if (y == label) ++c;
    return c;
  }
};

enum class DataFormat { libsvm, csv };

struct SplitSpec {
  double train_fraction = 0.5;
  int folds = 5;
  std::uint64_t seed = 0;
};

inline void validate_for_training(const Dataset& ds) {
  if (ds.n() < 2) throw std::invalid_argument("dataset: need at least 2 samples");
  for (int y : ds.labels)
    if (y != 1 && y != -1) throw std::invalid_argument("dataset: labels must be +1 or -1");
  if (ds.count_label(+1) == 0 || ds.count_label(-1) == 0)
    throw std::invalid_argument("dataset: both classes must be present");
  if (!ds.features.allFinite())
    throw std::invalid_argument("dataset: non-finite feature values");
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Canonicalizes raw label values to {+1, -1}. Accepts the +-1, 0/1 and
// 1/2 schemes; anything else is rejected.
inline std::vector<int> remap_labels(const std::vector<double>& raw, const std::string& origin) {
  std::set<double> distinct(raw.begin(), raw.end());
  if (distinct.size() > 2)
    throw std::runtime_error(origin + ": more than two distinct labels");
  if (distinct.size() < 2)
    throw std::invalid_argument(origin + ": single-class file");
  std::map<double, int> to_canonical;
  const std::set<double> pm1 = {-1.0, 1.0}, zero_one = {0.0, 1.0}, one_two = {1.0, 2.0};
  if (distinct == pm1) {
    to_canonical = {{1.0, +1}, {-1.0, -1}};
  } else if (distinct == zero_one) {
    to_canonical = {{1.0, +1}, {0.0, -1}};
  } else if (distinct == one_two) {
    to_canonical = {{1.0, +1}, {2.0, -1}};
  } else {
    throw std::runtime_error(origin + ": unsupported label scheme");
  }
  std::vector<int> out;
  out.reserve(raw.size());
  for (double v : raw) out.push_back(to_canonical.at(v));
  return out;
}

}  // namespace detail

// libsvm text format: "<label> <index>:<value> ...", indices 1-based,
// missing entries are zero.
inline Dataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> raw_labels;
  std::vector<std::vector<std::pair<int, double>>> rows;
  int max_index = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    double label;
    if (!(ls >> label))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": cannot parse label");
    std::vector<std::pair<int, double>> row;
    std::string tok;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected index:value, got '" + tok + "'");
      int idx = 0;
      double val = 0.0;
      try {
        idx = std::stoi(tok.substr(0, colon));
        val = std::stod(tok.substr(colon + 1));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed entry '" + tok + "'");
      }
      if (idx < 1)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": indices are 1-based");
      max_index = std::max(max_index, idx);
      row.emplace_back(idx, val);
    }
    raw_labels.push_back(label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty file");
  Dataset ds;
  ds.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), max_index);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& [idx, val] : rows[i]) ds.features(static_cast<Eigen::Index>(i), idx - 1) = val;
  ds.labels = detail::remap_labels(raw_labels, path);
  ds.ids.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) ds.ids[i] = static_cast<std::int64_t>(i);
  return ds;
}

// Headerless CSV, label in the last column.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> raw_labels;
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::vector<double> vals;
    std::istringstream ls(t);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(detail::trim(cell)));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed cell '" + cell + "'");
      }
    }
    if (vals.size() < 2)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": need at least one feature and a label");
    if (!rows.empty() && vals.size() - 1 != rows.front().size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": inconsistent column count");
    raw_labels.push_back(vals.back());
    vals.pop_back();
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty file");
  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  ds.labels = detail::remap_labels(raw_labels, path);
  ds.ids.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) ds.ids[i] = static_cast<std::int64_t>(i);
  return ds;
}

inline Dataset load_dataset(const std::string& path, DataFormat format) {
  Dataset ds = format == DataFormat::libsvm ? load_libsvm(path) : load_csv(path);
  if (!ds.features.allFinite())
    throw std::runtime_error(path + ": non-finite feature values");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path, DataFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (int i = 0; i < ds.n(); ++i) {
    if (format == DataFormat::libsvm) {
      out << (ds.labels[static_cast<std::size_t>(i)] > 0 ? "+1" : "-1");
      for (int j = 0; j < ds.dim(); ++j)
        if (ds.features(i, j) != 0.0) out << ' ' << (j + 1) << ':' << ds.features(i, j);
      out << '\n';
    } else {
      for (int j = 0; j < ds.dim(); ++j) out << ds.features(i, j) << ',';
      out << ds.labels[static_cast<std::size_t>(i)] << '\n';
    }
  }
}

enum class SyntheticKind { two_gaussians, two_moons };

// Balanced 2-D toy data. two-gaussians: isotropic clouds at (+-2, 0);
// two-moons: interleaved half circles. noise is the Gaussian jitter std.
inline Dataset generate_synthetic(SyntheticKind kind, int n, double noise, std::uint64_t seed) {
  if (n < 4) throw std::invalid_argument("generate_synthetic: n must be >= 4");
  if (n % 2 != 0) throw std::invalid_argument("generate_synthetic: n must be even for a balanced split");
  if (noise < 0) throw std::invalid_argument("generate_synthetic: noise must be >= 0");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(n)));
  Dataset ds;
  ds.features.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.ids.resize(static_cast<std::size_t>(n));
  const int half = n / 2;
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const bool positive = i < half;
    double x = 0, y = 0;
    if (kind == SyntheticKind::two_gaussians) {
      const double cx = positive ? 2.0 : -2.0;
      x = cx + noise * rng.normal();
      y = 0.0 + noise * rng.normal();
    } else {
      const int k = positive ? i : i - half;
      const double theta = pi * static_cast<double>(k) / static_cast<double>(half - 1 > 0 ? half - 1 : 1);
      if (positive) {
        x = std::cos(theta);
        y = std::sin(theta);
      } else {
        x = 1.0 - std::cos(theta);
        y = 0.5 - std::sin(theta);
      }
      x += noise * rng.normal();
      y += noise * rng.normal();
    }
    ds.features(i, 0) = x;
    ds.features(i, 1) = y;
    ds.labels[static_cast<std::size_t>(i)] = positive ? +1 : -1;
    ds.ids[static_cast<std::size_t>(i)] = i;
  }
  return ds;
}

// Feature scaler fit on training data: per-column mean 0, sample std 1
// (divisor n-1), std floored at 1e-12 so constant columns map to zero.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // floored sample std

  Dataset apply(const Dataset& ds) const {
    if (ds.dim() != mean.size()) throw std::invalid_argument("Scaler: dimension mismatch");
    Dataset out = ds;
    out.features = (ds.features.rowwise() - mean.transpose()).array().rowwise() /
                   scale.transpose().array();
    return out;
  }
};

inline Scaler fit_scaler(const Dataset& train) {
  if (train.n() < 1) throw std::invalid_argument("fit_scaler: empty training set");
  Scaler s;
  s.mean = train.features.colwise().mean();
  Eigen::MatrixXd centered = train.features.rowwise() - s.mean.transpose();
  const double denom = train.n() > 1 ? static_cast<double>(train.n() - 1) : 1.0;
  s.scale = (centered.array().square().colwise().sum() / denom).sqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j)
    if (s.scale[j] < 1e-12) s.scale[j] = 1e-12;
  return s;
}

inline std::tuple<Dataset, std::vector<Dataset>, Scaler>
standardize(const Dataset& train, const std::vector<Dataset>& others) {
  const Scaler s = fit_scaler(train);
  std::vector<Dataset> scaled_others;
  scaled_others.reserve(others.size());
  for (const auto& o : others) scaled_others.push_back(s.apply(o));
  return {s.apply(train), std::move(scaled_others), s};
}

namespace detail {

inline Dataset take_rows(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
  out.labels.resize(rows.size());
  out.ids.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(rows[i]);
    out.labels[i] = ds.labels[static_cast<std::size_t>(rows[i])];
    out.ids[i] = ds.ids[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

inline std::vector<int> class_indices(const Dataset& ds, int label) {
  std::vector<int> idx;
  for (int i = 0; i < ds.n(); ++i)
    if (ds.labels[static_cast<std::size_t>(i)] == label) idx.push_back(i);
  return idx;
}

}  // namespace detail

// Stratified train/test split: per-class shuffled partition so class
// proportions are preserved within one sample on each side.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
    throw std::invalid_argument("stratified_split: train_fraction must be in (0,1)");
  std::vector<int> train_rows, test_rows;
  for (int label : {+1, -1}) {
    std::vector<int> idx = detail::class_indices(ds, label);
    if (idx.size() < 2)
      throw std::invalid_argument("stratified_split: each class needs at least 2 samples");
    Rng rng(derive_seed(spec.seed, 0x5354u, static_cast<std::uint64_t>(label + 2)));
    rng.shuffle(idx);
    long want = std::lround(spec.train_fraction * static_cast<double>(idx.size()));
    want = std::clamp<long>(want, 1, static_cast<long>(idx.size()) - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (static_cast<long>(i) < want ? train_rows : test_rows).push_back(idx[i]);
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {detail::take_rows(ds, train_rows), detail::take_rows(ds, test_rows)};
}

// Stratified k-fold: per class, deal shuffled samples round-robin into k
// validation folds. Folds partition the dataset.
inline std::vector<std::pair<Dataset, Dataset>> kfold(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  if (k > ds.n()) throw std::invalid_argument("kfold: k exceeds dataset size");
  std::vector<std::vector<int>> fold_rows(static_cast<std::size_t>(k));
  for (int label : {+1, -1}) {
    std::vector<int> idx = detail::class_indices(ds, label);
    Rng rng(derive_seed(seed, 0x4b46u, static_cast<std::uint64_t>(label + 2)));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold_rows[i % static_cast<std::size_t>(k)].push_back(idx[i]);
  }
  std::vector<std::pair<Dataset, Dataset>> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    std::vector<int> val = fold_rows[static_cast<std::size_t>(f)];
    std::vector<int> train;
    for (int g = 0; g < k; ++g)
      if (g != f)
        train.insert(train.end(), fold_rows[static_cast<std::size_t>(g)].begin(),
                     fold_rows[static_cast<std::size_t>(g)].end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    out.emplace_back(detail::take_rows(ds, train), detail::take_rows(ds, val));
  }
  return out;
}

}  // namespace klid
