#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace klid {

// RBF kernel k(x,x') = exp(-gamma * ||x-x'||^2). Only family used here.
struct KernelSpec {
  double gamma = 0.5;
};

inline void validate(const KernelSpec& spec) {
  if (!(spec.gamma > 0.0)) throw std::invalid_argument("KernelSpec: gamma must be > 0");
}

// Saturation for the kernel-induced distance: exponents above 700 would
// overflow exp, so t is pinned at exp(700). Ratios to t_max stay ordered.
inline double kernel_distance_cap() {
  static const double cap = std::exp(700.0);
  return cap;
}

inline double kernel_from_sqdist(const KernelSpec& spec, double sqdist) {
  return std::exp(-spec.gamma * sqdist);
}

// t(x,x') = 1/k(x,x') - 1 = exp(gamma*||x-x'||^2) - 1, capped.
inline double kernel_distance_from_sqdist(const KernelSpec& spec, double sqdist) {
  const double e = spec.gamma * sqdist;
  if (e > 700.0) return kernel_distance_cap();
  return std::expm1(e);
}

inline double kernel_value(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& y) {
  validate(spec);
  if (x.size() != y.size()) throw std::invalid_argument("kernel_value: dimension mismatch");
  return kernel_from_sqdist(spec, (x - y).squaredNorm());
}

inline double kernel_distance(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y) {
  validate(spec);
  if (x.size() != y.size()) throw std::invalid_argument("kernel_distance: dimension mismatch");
  return kernel_distance_from_sqdist(spec, (x - y).squaredNorm());
}

// Pairwise kernel matrix, entry (i,j) = k(A_i, B_j). Entries are computed
// through the same squared-distance path as kernel_value so the two agree
// bit for bit.
inline Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& A,
                                   const Eigen::Ref<const Eigen::MatrixXd>& B) {
  validate(spec);
  if (A.cols() != B.cols()) throw std::invalid_argument("gram_matrix: dimension mismatch");
  Eigen::MatrixXd G(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      G(i, j) = kernel_from_sqdist(spec, (A.row(i) - B.row(j)).squaredNorm());
  return G;
}

}  // namespace klid
