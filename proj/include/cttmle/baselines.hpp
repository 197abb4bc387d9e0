#pragma once

#include <string>
#include <vector>

#include "cttmle/simulate.hpp"
#include "cttmle/target.hpp"

namespace cttmle {

// ---- inverse probability weighting -------------------------------------------------

struct IpwResult {
  double psi_hat = 0.0;
  double sigma2_hat = 0.0;
  std::vector<double> eic;  // W * Y - psi per subject
  double max_weight = 0.0;
  long zero_weight_subjects = 0;
  bool all_deviated = false;
  std::string to_json() const;
};

IpwResult ipw_estimate(const TickFrame& frame, const GFit& g_fit, const Intervention& g_star,
                       const WeightOptions& opt = WeightOptions());

// Interventional part built from the generating coefficients (known-G runs).
GFit true_g_fit(const DgpConfig& cfg, const TickFrame& frame);
// Generating per-tick hazards for the cov/trt/death processes.
FittedHazardField true_hazard_field(const DgpConfig& cfg, const TickFrame& frame);

// ---- discrete-time sequential-regression comparator ----------------------------------

struct LtmleResult {
  double psi_hat = 0.0;
  double sigma2_hat = 0.0;
  std::vector<double> eic;
  std::vector<double> eps_trace;  // one fluctuation per day, day D..0
  double max_weight = 0.0;
  std::string to_json() const;
};

struct LtmleOptions {
  bool misspecified = false;  // drop time-varying covariates from the outcome fits
};

// Per-day iterated regressions with one fluctuation per day; requires data
// on the daily grid. Throws SparseTimePoint when a day lacks the rows its
// per-day fits need.
LtmleResult ltmle_discrete(const std::vector<ObservedPath>& cohort, int days,
                           const Intervention& g_star,
                           const LtmleOptions& opt = LtmleOptions());

}  // namespace cttmle
