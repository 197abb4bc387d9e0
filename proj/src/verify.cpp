#include "cttmle/verify.hpp"

#include <cmath>
#include <sstream>

#include "cttmle/gcomp.hpp"
#include "cttmle/target.hpp"

namespace cttmle {

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

CheckResult check_sweep_matches_enumeration(bool inject) {
  CheckResult out{"sweep_matches_enumeration", true, ""};
  const Intervention g1 = Intervention::static_rule(1);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TinyModel model = TinyModel::random(seed, seed % 2 == 0);
    const double psi_exact = enumerate_gcomp(model, g1);
    const std::vector<ObservedPath> cohort = model.simulate(8, seed * 17 + 1);
    ModelGrid grid;
    grid.ticks = model.ticks;
    grid.tau = model.tau;
    const TickFrame frame = build_tick_frame(cohort, grid);
    TinyModel sweep_model = model;
    if (inject) sweep_model.lam_death.intercept += 0.3;
    const ExactTinyHazards hazards(sweep_model);
    const ExactTinyValue zmodel(sweep_model, g1);
    const ZSweepState st = backward_sweep(frame, hazards, zmodel, g1, nullptr);
    worst = std::max(worst, std::abs(st.psi_hat - psi_exact));
    for (double z0 : st.z_t0) worst = std::max(worst, std::abs(z0 - psi_exact));
  }
  out.pass = worst < 1e-10;
  out.detail = "max |sweep - enumeration| = " + fmt(worst);
  return out;
}

CheckResult check_von_mises(bool inject) {
  CheckResult out{"von_mises_identity", true, ""};
  const Intervention g1 = Intervention::static_rule(1);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TinyModel truth = TinyModel::random(seed + 100, seed % 2 == 0);
    TinyModel model = TinyModel::random(seed, seed % 2 == 0);
    truth.l0 = model.l0;
    truth.l_init = model.l_init;
    if (inject) model.lam_death.intercept += 0.3;
    EicEnumeration e = enumerate_eic_mean(model, truth, g1);
    if (inject) {
      // evaluate the gradient under a hazard that disagrees with the model
      TinyModel wrong = model;
      wrong.lam_death.intercept -= 0.3;
      EicEnumeration mixed = enumerate_eic_mean(wrong, truth, g1);
      e.P0_D_star = mixed.P0_D_star;
    }
    const double lhs = e.psi_P - e.psi_P0 + e.P0_D_star;
    worst = std::max(worst, std::abs(lhs - e.remainder_R2));
  }
  out.pass = worst < 1e-8;
  out.detail = "max |Psi(P)-Psi(P0)+P0 D* - R2| = " + fmt(worst);
  return out;
}

CheckResult check_remainder_zero_cases() {
  CheckResult out{"remainder_double_robustness_zeros", true, ""};
  const Intervention g1 = Intervention::static_rule(1);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TinyModel truth = TinyModel::random(seed, seed % 2 == 0);
    // same interventional part, different non-interventional part
    TinyModel q_changed = TinyModel::random(seed + 50, seed % 2 == 0);
    q_changed.l0 = truth.l0;
    q_changed.l_init = truth.l_init;
    q_changed.pi0 = truth.pi0;
    q_changed.pi = truth.pi;
    q_changed.lam_cens = truth.lam_cens;
    EicEnumeration eg = enumerate_eic_mean(q_changed, truth, g1);
    worst = std::max(worst, std::abs(eg.remainder_R2));
    // same non-interventional part, different interventional part
    TinyModel g_changed = TinyModel::random(seed + 80, seed % 2 == 0);
    g_changed.l0 = truth.l0;
    g_changed.l_init = truth.l_init;
    g_changed.mu = truth.mu;
    g_changed.lam_cov = truth.lam_cov;
    g_changed.lam_trt = truth.lam_trt;
    g_changed.lam_death = truth.lam_death;
    EicEnumeration eq = enumerate_eic_mean(g_changed, truth, g1);
    worst = std::max(worst, std::abs(eq.remainder_R2));
    // gradient mean-zero at the truth
    EicEnumeration self = enumerate_eic_mean(truth, truth, g1);
    worst = std::max(worst, std::abs(self.P0_D_star));
    worst = std::max(worst, std::abs(self.remainder_R2));
  }
  out.pass = worst < 1e-12;
  out.detail = "max |R2 or P0 D*| over zero cases = " + fmt(worst);
  return out;
}

// finite-difference check of one quasi-binomial offset-submodel loss
double score_fd_worst(std::uint64_t seed, bool hazard_form) {
  Rng rng(derive_seed(seed, hazard_form ? 2 : 1));
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 20;
    std::vector<double> y(n), base(n), cov(n);
    for (int i = 0; i < n; ++i) {
      base[i] = 0.05 + 0.9 * rng.uniform();
      cov[i] = (hazard_form ? 4.0 : 8.0) * (rng.uniform() - 0.5);
      y[i] = hazard_form ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.uniform();
    }
    auto loss = [&](double eps) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double p = expit(logit(base[i]) + eps * cov[i]);
        total += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
      }
      return total;
    };
    double analytic = 0.0;
    for (int i = 0; i < n; ++i) analytic += cov[i] * (y[i] - base[i]);
    const double h = 1e-5;
    const double fd = (loss(h) - loss(-h)) / (2.0 * h);
    const double rel = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
    worst = std::max(worst, rel);
  }
  return worst;
}

CheckResult check_score_identities() {
  CheckResult out{"fluctuation_score_identities", true, ""};
  const double w1 = score_fd_worst(11, false);  // iterated-expectation tilt
  const double w2 = score_fd_worst(12, true);   // hazard tilt
  const double worst = std::max(w1, w2);
  out.pass = worst < 1e-6;
  out.detail = "max relative FD error = " + fmt(worst);
  return out;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  return {"sweep_matches_enumeration", "von_mises_identity",
          "remainder_double_robustness_zeros", "fluctuation_score_identities"};
}

std::vector<CheckResult> run_verification(bool inject_error) {
  std::vector<CheckResult> out;
  out.push_back(check_sweep_matches_enumeration(inject_error));
  out.push_back(check_von_mises(inject_error));
  out.push_back(check_remainder_zero_cases());
  out.push_back(check_score_identities());
  return out;
}

}  // namespace cttmle
