#pragma once

#include <string>
#include <vector>

#include "cttmle/events.hpp"

namespace cttmle {

// Data-generating process on a daily grid; each day carries four ordered
// sub-ticks (cov, trt, censor, death). All effects on the logit scale.
struct DgpConfig {
  long n = 1000;
  double tau = 30.0;
  std::uint64_t seed = 1;
  // counting-process probabilities are monitoring_scale * expit(lp), truncated
  // just below 1; assignment probabilities (baseline and switch) are plain
  // expit and are not scaled.
  double monitoring_scale = 1.0;

  double a0_intercept = 0.0;
  double a0_l0 = 0.15;         // on (L0 - 3.5)
  double covm_intercept = -2.0;
  double l1_intercept = -0.5;  // new L = 1 draw
  double l1_a = 0.8;
  double trtm_intercept = -3.9;
  double trtm_l_not_a = 0.6;
  double pi_intercept = 0.0;  // switch-on draw at a monitor
  double pi_l = 0.3;
  double pi_a0 = -0.2;
  double cens_intercept = -6.2;
  double cens_a0 = 0.4;
  double cens_l = 0.5;
  double death_intercept = -5.0;
  double death_a0 = -0.7;
  double death_a = -0.9;
  double death_l = 0.9;
  double death_a0_x_l = 0.35;

  void validate() const;

  static DgpConfig defaults(double tau_days) {
    DgpConfig c;
    c.tau = tau_days;
    c.monitoring_scale = 30.0 / tau_days;
    return c;
  }
  static DgpConfig from_file(const std::string& filename);
  void write_file(const std::string& filename) const;

  // per-tick conditional probabilities
  double p_a0(double l0) const;
  double p_cov_monitor() const;
  double p_new_l1(int a_current) const;
  double p_trt_monitor(double l, int a) const;
  double p_switch_on(double l, int a0) const;
  double p_censor(int a0, double l) const;
  double p_death(int a0, int a, double l) const;
};

struct OraclePsi {
  double psi = 0.0;
  double mc_se = 0.0;
  long n_mc = 0;
  std::string intervention;
};

std::vector<ObservedPath> simulate_cohort(const DgpConfig& config);
std::vector<ObservedPath> simulate_under_intervention(const DgpConfig& config,
                                                      const Intervention& g_star);
OraclePsi true_psi(const DgpConfig& config, const Intervention& g_star, long n_mc,
                   std::uint64_t seed);

}  // namespace cttmle
