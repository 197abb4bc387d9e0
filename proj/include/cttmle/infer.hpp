#pragma once

#include <string>
#include <vector>

#include "cttmle/baselines.hpp"

namespace cttmle {

// Standard normal quantile (Wichura's rational approximation; absolute error
// well below 1e-8 over (0, 1)).
double normal_quantile(double p);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
};

ConfidenceInterval confidence_interval(double psi, double sigma2, long n, double level);

// ---- contrasts -----------------------------------------------------------------------

struct ContrastResult {
  double psi1 = 0.0;
  double psi0 = 0.0;
  double diff = 0.0;
  double sigma2_diff = 0.0;  // empirical variance of the per-subject influence difference
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double level = 0.95;
  long n = 0;
  std::string to_json() const;
};

ContrastResult contrast(double psi1, const std::vector<double>& eic1, double psi0,
                        const std::vector<double>& eic0, double level);

// ---- simulation studies -----------------------------------------------------------------

struct StudyConfig {
  DgpConfig dgp;
  int M = 100;
  std::uint64_t seed = 1;
  LearnerMode mode = LearnerMode::correct;
  std::vector<std::string> estimators = {"tmle"};  // tmle | ipw | ltmle
  double level = 0.95;
  double oracle_diff = 0.0;  // established externally by true_psi
  int jobs = 1;
  TmleOptions tmle;
};

struct StudyRow {
  std::string estimator;
  double tau = 0.0;
  long n = 0;
  int M = 0;
  double psi0 = 0.0;
  double mean_est = 0.0;
  double bias = 0.0;
  double coverage = 0.0;   // negative when not applicable
  double sqrt_mse = 0.0;
  double mean_sigma = 0.0;
  long failures = 0;
  double sd_est = 0.0;     // across-repetition standard deviation
};

struct StudyReport {
  std::vector<StudyRow> rows;
  std::string to_csv() const;
  std::string to_json() const;
};

StudyReport run_study(const StudyConfig& config);

// One repetition's estimates for every requested estimator on one cohort;
// exposed for tests and the CLI estimate command.
struct RepEstimate {
  std::string estimator;
  ContrastResult contrast;
  double sigma_diff = 0.0;
  bool failed = false;
  std::string error;
};

std::vector<RepEstimate> estimate_contrasts(const std::vector<ObservedPath>& cohort,
                                            const StudyConfig& config);

}  // namespace cttmle
