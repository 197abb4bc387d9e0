#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "cttmle/simulate.hpp"
#include "doctest.h"

using namespace cttmle;

TEST_CASE("empty cohort") {
  DgpConfig cfg = DgpConfig::defaults(5);
  cfg.n = 0;
  CHECK(simulate_cohort(cfg).empty());
}

TEST_CASE("same seed gives identical cohorts") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.n = 50;
  cfg.seed = 42;
  const auto a = simulate_cohort(cfg);
  const auto b = simulate_cohort(cfg);
  std::ostringstream sa, sb;
  write_cohort_csv(a, sa);
  write_cohort_csv(b, sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("forced-zero hazards produce no terminal events") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.n = 200;
  cfg.seed = 7;
  cfg.cens_intercept = -1e300;
  cfg.death_intercept = -1e300;
  for (const auto& p : simulate_cohort(cfg)) {
    CHECK(!p.censored());
    CHECK(!p.died());
    CHECK(p.outcome() == 0.0);
  }
}

TEST_CASE("static intervention forces the treatment labels") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.n = 100;
  cfg.seed = 3;
  const auto cohort = simulate_under_intervention(cfg, Intervention::static_rule(1));
  for (const auto& p : cohort) {
    CHECK(p.a0 == 1);
    CHECK(!p.censored());
    for (const auto& e : p.events)
      if (e.kind == EventKind::trt_monitor) CHECK(*e.a_value == 1);
  }
}

TEST_CASE("identity intervention reproduces the uncensored observed law") {
  // when assignment is already degenerate at 1 and censoring is off, the
  // interventional draw stream coincides with the observed one
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.n = 80;
  cfg.seed = 11;
  cfg.cens_intercept = -1e300;
  cfg.pi_intercept = 1e300;  // switch-on probability 1
  cfg.pi_l = 0.0;
  cfg.pi_a0 = 0.0;
  cfg.a0_intercept = 1e300;  // baseline treatment always 1
  cfg.a0_l0 = 0.0;
  const auto observed = simulate_cohort(cfg);
  const auto intervened = simulate_under_intervention(cfg, Intervention::static_rule(1));
  std::ostringstream sa, sb;
  write_cohort_csv(observed, sa);
  write_cohort_csv(intervened, sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("null treatment effect when nothing depends on treatment") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.death_a0 = 0.0;
  cfg.death_a = 0.0;
  cfg.death_a0_x_l = 0.0;
  cfg.l1_a = 0.0;
  const auto p1 = true_psi(cfg, Intervention::static_rule(1), 50000, 5);
  const auto p0 = true_psi(cfg, Intervention::static_rule(0), 50000, 6);
  const double se = std::sqrt(p1.mc_se * p1.mc_se + p0.mc_se * p0.mc_se);
  CHECK(std::abs(p1.psi - p0.psi) < 3.0 * se);
}

TEST_CASE("all-zero hazards give psi exactly zero") {
  DgpConfig cfg = DgpConfig::defaults(5);
  cfg.death_intercept = -1e300;
  cfg.cens_intercept = -1e300;
  const auto p = true_psi(cfg, Intervention::static_rule(1), 10000, 1);
  CHECK(p.psi == 0.0);
  CHECK(p.mc_se == 0.0);
}

TEST_CASE("true_psi validates n_mc and reports the binomial standard error") {
  DgpConfig cfg = DgpConfig::defaults(5);
  CHECK_THROWS_AS(true_psi(cfg, Intervention::static_rule(1), 100, 1), ConfigError);
  const auto p = true_psi(cfg, Intervention::static_rule(0), 20000, 2);
  CHECK(p.mc_se == doctest::Approx(std::sqrt(p.psi * (1 - p.psi) / 20000.0)));
  CHECK(p.psi > 0.0);
  CHECK(p.psi < 1.0);
}

TEST_CASE("protective effect under the default configuration") {
  DgpConfig cfg = DgpConfig::defaults(30);
  const auto p1 = true_psi(cfg, Intervention::static_rule(1), 40000, 31);
  const auto p0 = true_psi(cfg, Intervention::static_rule(0), 40000, 32);
  CHECK(p1.psi < p0.psi);  // treatment lowers mortality
  CHECK(p0.psi - p1.psi > 0.02);
  CHECK(p0.psi - p1.psi < 0.5);
}

TEST_CASE("qualitative effect directions") {
  DgpConfig cfg = DgpConfig::defaults(30);
  cfg.n = 100000;
  cfg.seed = 99;
  const auto cohort = simulate_cohort(cfg);

  // P(A0 = 1 | L0 = 6) > P(A0 = 1 | L0 = 1)
  long n6 = 0, a6 = 0, n1 = 0, a1 = 0;
  // current treatment raises the next new covariate value
  long la1 = 0, la1_hit = 0, la0 = 0, la0_hit = 0;
  // death counts by baseline arm
  long d_t = 0, n_t = 0, d_c = 0, n_c = 0;
  for (const auto& p : cohort) {
    if (p.l0[0] == 6.0) {
      ++n6;
      a6 += p.a0;
    }
    if (p.l0[0] == 1.0) {
      ++n1;
      a1 += p.a0;
    }
    int a = p.a0;
    for (const auto& e : p.events) {
      if (e.kind == EventKind::cov_monitor) {
        if (a == 1) {
          ++la1;
          la1_hit += (*e.l_value)[0] == 1.0;
        } else {
          ++la0;
          la0_hit += (*e.l_value)[0] == 1.0;
        }
      }
      if (e.kind == EventKind::trt_monitor) a = *e.a_value;
    }
    if (p.a0 == 1) {
      ++n_t;
      d_t += p.died();
    } else {
      ++n_c;
      d_c += p.died();
    }
  }
  CHECK(double(a6) / n6 > double(a1) / n1);
  CHECK(double(la1_hit) / la1 > double(la0_hit) / la0);
  // protective main effect: lower death frequency under initial treatment
  CHECK(double(d_t) / n_t < double(d_c) / n_c);
}

TEST_CASE("monitoring counts stay stable across horizons") {
  double counts[4] = {0, 0, 0, 0};
  const double taus[4] = {5, 30, 50, 100};
  for (int k = 0; k < 4; ++k) {
    DgpConfig cfg = DgpConfig::defaults(taus[k]);
    cfg.n = 10000;
    cfg.seed = 1234 + k;
    const auto cohort = simulate_cohort(cfg);
    long monitors = 0;
    for (const auto& p : cohort)
      for (const auto& e : p.events)
        monitors += e.kind == EventKind::cov_monitor || e.kind == EventKind::trt_monitor;
    counts[k] = double(monitors) / cohort.size();
  }
  for (int k = 1; k < 4; ++k) {
    CHECK(counts[k] / counts[0] > 0.9);
    CHECK(counts[k] / counts[0] < 1.1);
  }
}

TEST_CASE("config file round trip") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.n = 17;
  cfg.seed = 5;
  cfg.death_a = -1.25;
  cfg.write_file("/tmp/cttmle_test_dgp.cfg");
  const DgpConfig back = DgpConfig::from_file("/tmp/cttmle_test_dgp.cfg");
  CHECK(back.n == 17);
  CHECK(back.tau == 10);
  CHECK(back.death_a == -1.25);
  CHECK(back.monitoring_scale == doctest::Approx(3.0));
  CHECK_THROWS_AS(DgpConfig::from_file("/tmp/does_not_exist.cfg"), ConfigError);
}

TEST_CASE("config validation") {
  DgpConfig cfg = DgpConfig::defaults(10);
  cfg.monitoring_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = DgpConfig::defaults(10);
  cfg.n = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
