#pragma once

#include "hetmed/core_model.hpp"

#include <random>
#include <string>

namespace testing_util {

using namespace hetmed;

/// Dataset from raw arrays; every covariate after the intercept is continuous.
inline Dataset make_dataset(const MatrixXd& Z, const VectorXd& T, const VectorXd& M, const VectorXd& Y) {
  Dataset d;
  d.Z = Z;
  d.T = T;
  d.M = M;
  d.Y = Y;
  d.covariate_names.push_back(kInterceptName);
  d.covariate_kind.push_back(CovariateKind::continuous);
  for (Index j = 1; j < Z.cols(); ++j) {
    d.covariate_names.push_back("z" + std::to_string(j));
    d.covariate_kind.push_back(CovariateKind::continuous);
  }
  return d;
}

/// Gaussian covariates plus intercept, balanced-ish random arms and
/// standard-normal M, Y. Both arms get at least two units.
inline Dataset random_dataset(Index n, Index p, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd Z(n, p);
  VectorXd T(n), M(n), Y(n);
  for (Index i = 0; i < n; ++i) {
    Z(i, 0) = 1.0;
    for (Index j = 1; j < p; ++j) Z(i, j) = g(rng);
    T(i) = i < 2 ? 1.0 : (i < 4 ? -1.0 : (g(rng) > 0 ? 1.0 : -1.0));
    M(i) = g(rng);
    Y(i) = g(rng);
  }
  return make_dataset(Z, T, M, Y);
}

/// Random theta with every entry N(0,1).
inline ThetaParams random_theta(Index p, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ThetaParams th = ThetaParams::zeros(p);
  for (Index j = 0; j < p; ++j) {
    th.alpha0(j) = g(rng);
    th.alpha1(j) = g(rng);
    th.gamma0(j) = g(rng);
    th.gamma1(j) = g(rng);
  }
  th.beta0 = g(rng);
  th.beta1 = g(rng);
  return th;
}

inline Table make_table(std::vector<std::string> header, std::vector<std::vector<std::string>> rows) {
  Table t;
  t.header = std::move(header);
  t.rows = std::move(rows);
  return t;
}

}  // namespace testing_util
