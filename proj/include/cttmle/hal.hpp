#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cttmle/util.hpp"

namespace cttmle::hal {

enum class Family { binomial, poisson };

// One indicator basis column: 1{knot(section) <= x(section)}.
struct BasisIndex {
  std::vector<int> section;    // covariate coordinates, ascending
  std::vector<double> knot;    // observed support point on those coordinates
};

struct BasisSet {
  std::vector<BasisIndex> bases;
  Eigen::MatrixXd columns;  // rows x bases, evaluated on the enumeration data
};

// All sections up to max_order, knots at distinct observed section values,
// uniformly subsampled to max_knots when exceeded; duplicate columns dropped.
BasisSet enumerate_basis(const Eigen::MatrixXd& rows, int max_order, int max_knots,
                         std::uint64_t seed = 0);

struct HALModel {
  double intercept = 0.0;
  std::vector<BasisIndex> terms;
  Eigen::VectorXd beta;       // aligned with terms
  double lambda = 0.0;
  double norm_bound = 0.0;    // |b0| + sum |beta|, read off after fitting
  Family family = Family::binomial;
  bool kkt_ok = false;
  double kkt_worst = 0.0;

  double linear_predictor(const Eigen::VectorXd& x) const;
  // binomial: probability; poisson: rate (exposure offset excluded)
  double predict(const Eigen::VectorXd& x) const;
  std::size_t active_count() const;
};

struct HalOptions {
  int max_order = 2;
  int max_knots = 200;
  int max_iter = 10000;
  double tol = 1e-7;
  std::uint64_t seed = 0;
};

// Penalized fit at a single lambda on a prebuilt basis.
HALModel fit_hal_on_basis(const BasisSet& basis, const Eigen::VectorXd& y, Family family,
                          double lambda, const Eigen::VectorXd* weights = nullptr,
                          const Eigen::VectorXd* offset = nullptr,
                          const HalOptions& opt = HalOptions());

// Convenience: enumerate basis then fit.
HALModel fit_hal(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                 double lambda, const HalOptions& opt = HalOptions(),
                 const Eigen::VectorXd* weights = nullptr,
                 const Eigen::VectorXd* offset = nullptr);

std::vector<double> default_lambda_path(const BasisSet& basis, const Eigen::VectorXd& y,
                                        Family family, int n_lambda = 30,
                                        const Eigen::VectorXd* weights = nullptr,
                                        const Eigen::VectorXd* offset = nullptr);

struct CvResult {
  double lambda = 0.0;
  int index = -1;
  std::vector<double> risks;       // mean validation loss per lambda
  std::vector<double> risk_ses;    // fold SE per lambda
};

CvResult cv_norm_bound(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                       int V, const std::vector<double>& lambdas, bool one_se = false,
                       const HalOptions& opt = HalOptions(), std::uint64_t fold_seed = 1);

// CV-picked lambda, then a final fit at it.
HALModel fit_hal_cv(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                    int V = 5, bool one_se = false, const HalOptions& opt = HalOptions());

std::string to_json(const HALModel& model);

}  // namespace cttmle::hal
