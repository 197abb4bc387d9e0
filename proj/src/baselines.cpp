#include "cttmle/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace cttmle {

// ---- IPW -----------------------------------------------------------------------------

std::string IpwResult::to_json() const {
  nlohmann::json j;
  j["psi_hat"] = psi_hat;
  j["sigma2_hat"] = sigma2_hat;
  j["max_weight"] = max_weight;
  j["zero_weight_subjects"] = zero_weight_subjects;
  j["all_deviated"] = all_deviated;
  return j.dump();
}

IpwResult ipw_estimate(const TickFrame& frame, const GFit& g_fit, const Intervention& g_star,
                       const WeightOptions& opt) {
  const CleverWeights w = clever_weights(frame, g_fit, g_star, opt);
  const std::size_t n = frame.n_subjects();
  if (n == 0) throw EmptyRiskSet("empty cohort");
  IpwResult out;
  out.max_weight = w.max_weight;
  out.zero_weight_subjects = w.zero_weight_subjects;
  double sum = 0.0;
  std::vector<double> wy(n);
  for (std::size_t i = 0; i < n; ++i) {
    wy[i] = w.full[i] * (*frame.cohort)[i].outcome();
    sum += wy[i];
  }
  out.psi_hat = sum / static_cast<double>(n);
  out.eic.resize(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.eic[i] = wy[i] - out.psi_hat;
    ss += out.eic[i] * out.eic[i];
  }
  out.sigma2_hat = ss / static_cast<double>(n);
  out.all_deviated = (w.consistent_subjects == 0);
  return out;
}

// ---- generating-truth interventional part ----------------------------------------------

namespace {

// minimal specs matching the generating model exactly
BinaryRegressionModel truth_model(const TickFrame& frame, std::vector<std::string> items,
                                  std::initializer_list<double> coefs, double prob_scale) {
  BinaryRegressionModel m;
  m.spec = FeatureSpec("truth", std::move(items));
  m.spec.bind(frame.l0_dim, frame.l_dim, frame.grid.tau);
  m.beta = Eigen::VectorXd(static_cast<Eigen::Index>(coefs.size()));
  Eigen::Index k = 0;
  for (double c : coefs) m.beta[k++] = c;
  if (m.beta.size() != static_cast<Eigen::Index>(m.spec.dim()))
    throw ConfigError("truth model coefficient mismatch");
  m.prob_scale = prob_scale;
  m.fitted = true;
  return m;
}

}  // namespace

GFit true_g_fit(const DgpConfig& cfg, const TickFrame& frame) {
  GFit g;
  g.baseline_pi = truth_model(frame, {"1", "l0"},
                              {cfg.a0_intercept - 3.5 * cfg.a0_l0, cfg.a0_l0}, 1.0);
  g.pi_hat = truth_model(frame, {"1", "l_current", "a0"},
                         {cfg.pi_intercept, cfg.pi_l, cfg.pi_a0}, 1.0);
  {
    BinaryRegressionModel m =
        truth_model(frame, {"1", "a0", "l_current"},
                    {cfg.cens_intercept, cfg.cens_a0, cfg.cens_l}, cfg.monitoring_scale);
    HazardModel hz;
    hz.process = Process::cens;
    hz.spec = m.spec;
    hz.prob_scale = cfg.monitoring_scale;
    hz.predictor = std::move(m);
    g.censor_hazard = std::move(hz);
  }
  return g;
}

FittedHazardField true_hazard_field(const DgpConfig& cfg, const TickFrame& frame) {
  auto make = [&](Process proc, std::vector<std::string> items,
                  std::initializer_list<double> coefs) {
    BinaryRegressionModel m = truth_model(frame, std::move(items), coefs, cfg.monitoring_scale);
    HazardModel hz;
    hz.process = proc;
    hz.spec = m.spec;
    hz.prob_scale = cfg.monitoring_scale;
    hz.predictor = std::move(m);
    return hz;
  };
  HazardModel cov = make(Process::cov, {"1"}, {cfg.covm_intercept});
  HazardModel trt =
      make(Process::trt, {"1", "l_x_not_a"}, {cfg.trtm_intercept, cfg.trtm_l_not_a});
  HazardModel death = make(Process::death, {"1", "a0", "a_current", "l_current", "a0_x_l"},
                           {cfg.death_intercept, cfg.death_a0, cfg.death_a, cfg.death_l,
                            cfg.death_a0_x_l});
  return FittedHazardField(std::move(cov), std::move(trt), std::move(death),
                           frame.n_subjects(), frame.grid.ticks.size());
}

// ---- discrete-time LTMLE ------------------------------------------------------------------

std::string LtmleResult::to_json() const {
  nlohmann::json j;
  j["psi_hat"] = psi_hat;
  j["sigma2_hat"] = sigma2_hat;
  j["eps_trace"] = eps_trace;
  j["max_weight"] = max_weight;
  return j.dump();
}

namespace {

struct DailyData {
  // per subject, per day t = 0..D: value at the end of day t (baseline at 0)
  std::vector<std::vector<double>> L;
  std::vector<std::vector<int>> A;
  std::vector<std::vector<int>> C;  // censored by end of day t
  std::vector<std::vector<int>> Y;  // dead by end of day t
  std::vector<double> l0;
  std::vector<int> a0;
};

DailyData collapse_daily(const std::vector<ObservedPath>& cohort, int days) {
  DailyData d;
  const std::size_t n = cohort.size();
  d.L.assign(n, std::vector<double>(days + 1, 0.0));
  d.A.assign(n, std::vector<int>(days + 1, 0));
  d.C.assign(n, std::vector<int>(days + 1, 0));
  d.Y.assign(n, std::vector<int>(days + 1, 0));
  d.l0.resize(n);
  d.a0.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ObservedPath& p = cohort[i];
    d.l0[i] = p.l0.empty() ? 0.0 : p.l0[0];
    d.a0[i] = p.a0;
    double l = default_l_current(p.l0)[0];
    int a = p.a0;
    int c = 0, y = 0;
    d.L[i][0] = l;
    d.A[i][0] = a;
    std::size_t e = 0;
    for (int t = 1; t <= days; ++t) {
      while (e < p.events.size() && p.events[e].time < t) {
        const EventRecord& ev = p.events[e];
        switch (ev.kind) {
          case EventKind::cov_monitor: l = (*ev.l_value)[0]; break;
          case EventKind::trt_monitor: a = *ev.a_value; break;
          case EventKind::censor: c = 1; break;
          case EventKind::death: y = 1; break;
        }
        ++e;
      }
      d.L[i][t] = l;
      d.A[i][t] = a;
      d.C[i][t] = c;
      d.Y[i][t] = y;
    }
  }
  return d;
}

}  // namespace

LtmleResult ltmle_discrete(const std::vector<ObservedPath>& cohort, int days,
                           const Intervention& g_star, const LtmleOptions& opt) {
  const std::size_t n = cohort.size();
  if (n == 0) throw EmptyRiskSet("empty cohort");
  if (days < 1) throw ConfigError("ltmle needs at least one day");
  const DailyData dd = collapse_daily(cohort, days);

  // the regime's day-level labels; static rules only depend on the snapshot
  // trivially, so evaluate on a per-subject daily snapshot
  auto rule_at = [&](std::size_t i, int t) {
    HistorySnapshot s;
    s.l0 = cohort[i].l0;
    s.a0 = dd.a0[i];
    s.a_current = t > 0 ? dd.A[i][t - 1] : dd.a0[i];
    s.l_current = {dd.L[i][t]};
    s.t = t;
    s.tau = days;
    return g_star.rule(s);
  };

  // per-day treatment and censoring fits among subjects at risk
  // H[i] accumulates the cumulative inverse-probability covariate
  std::vector<double> H(n, 0.0);
  std::vector<std::vector<double>> Hday(days + 1, std::vector<double>(n, 0.0));
  {
    // baseline assignment
    Eigen::MatrixXd X0(n, 2);
    Eigen::VectorXd y0(n);
    for (std::size_t i = 0; i < n; ++i) {
      X0(i, 0) = 1.0;
      X0(i, 1) = dd.l0[i];
      y0[i] = dd.a0[i];
    }
    BinaryRegressionModel pi0 = fit_binary(X0, y0, Eigen::VectorXd::Ones(n));
    for (std::size_t i = 0; i < n; ++i) {
      const int r0 = rule_at(i, 0);
      const double p1 = clamped_expit(pi0.beta.dot(X0.row(i)));
      const double pr = r0 == 1 ? p1 : 1.0 - p1;
      H[i] = (dd.a0[i] == r0) ? 1.0 / std::max(pr, 1e-12) : 0.0;
      Hday[0][i] = H[i];
    }
  }
  for (int t = 1; t <= days; ++t) {
    // risk set for the day-t mechanism fits: alive and uncensored entering day t
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (dd.Y[i][t - 1] == 0 && dd.C[i][t - 1] == 0) rows.push_back(i);
    if (rows.empty())
      throw SparseTimePoint("no at-risk subjects at day " + std::to_string(t));

    // at t = 1 the previous-day treatment equals the baseline one
    const int gdim = t == 1 ? 4 : 5;
    auto day_design = [&](std::size_t i) {
      Eigen::VectorXd x(gdim);
      if (gdim == 4)
        x << 1.0, dd.l0[i], static_cast<double>(dd.a0[i]), dd.L[i][t];
      else
        x << 1.0, dd.l0[i], static_cast<double>(dd.a0[i]), dd.L[i][t],
            static_cast<double>(dd.A[i][t - 1]);
      return x;
    };
    Eigen::MatrixXd Xg(rows.size(), gdim);
    Eigen::VectorXd yA(rows.size()), yC(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      Xg.row(k) = day_design(rows[k]).transpose();
      yA[k] = dd.A[rows[k]][t];
      yC[k] = dd.C[rows[k]][t];
    }
    BinaryRegressionModel g_t, c_t;
    try {
      g_t = fit_binary(Xg, yA, Eigen::VectorXd::Ones(rows.size()));
      c_t = fit_binary(Xg, yC, Eigen::VectorXd::Ones(rows.size()));
    } catch (const DegenerateDesign& e) {
      throw SparseTimePoint("day " + std::to_string(t) + " mechanism fit failed: " + e.what());
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      const int r = rule_at(i, t);
      const double p1 = clamped_expit(g_t.beta.dot(Xg.row(k)));
      const double pa = r == 1 ? p1 : 1.0 - p1;
      const double pc = clamped_expit(c_t.beta.dot(Xg.row(k)));
      if (dd.A[i][t] != r || dd.C[i][t] == 1)
        H[i] = 0.0;
      else
        H[i] /= std::max(pa * (1.0 - pc), 1e-12);
      Hday[t][i] = H[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      if (dd.Y[i][t - 1] == 1 || dd.C[i][t - 1] == 1) Hday[t][i] = 0.0;
  }

  LtmleResult out;
  for (double h : H) out.max_weight = std::max(out.max_weight, h);

  // backward iterated regressions with one fluctuation per day
  std::vector<std::vector<double>> Qstep(days + 1, std::vector<double>(n, 0.0));
  std::vector<double> Qnext(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) Qnext[i] = dd.Y[i][days];

  const int qdim = opt.misspecified ? 3 : 5;
  for (int t = days; t >= 1; --t) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (dd.Y[i][t - 1] == 0 && dd.C[i][t] == 0) rows.push_back(i);
    if (rows.empty()) throw SparseTimePoint("no outcome rows at day " + std::to_string(t));

    auto q_design = [&](std::size_t i, bool intervened) {
      Eigen::VectorXd x(qdim);
      const double a0 = intervened ? rule_at(i, 0) : dd.a0[i];
      if (opt.misspecified) {
        x << 1.0, dd.l0[i], a0;
      } else {
        const double at = intervened ? rule_at(i, t) : dd.A[i][t];
        x << 1.0, dd.l0[i], a0, dd.L[i][t], at;
      }
      return x;
    };

    Eigen::MatrixXd Xq(rows.size(), qdim);
    Eigen::VectorXd yq(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      Xq.row(k) = q_design(i, false).transpose();
      yq[k] = dd.Y[i][t] == 1 ? 1.0 : Qnext[i];
    }
    BinaryRegressionModel q_t;
    try {
      q_t = fit_binary(Xq, yq, Eigen::VectorXd::Ones(rows.size()));
    } catch (const DegenerateDesign& e) {
      throw SparseTimePoint("day " + std::to_string(t) + " outcome fit failed: " + e.what());
    }

    // fluctuate on the fitted rows, evaluated at the intervened treatment
    std::vector<double> fy, fbase, fcov;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      const double base = clamped_expit(q_t.beta.dot(q_design(i, true)));
      fy.push_back(yq[k]);
      fbase.push_back(base);
      fcov.push_back(Hday[t][i]);
    }
    const EpsFit eps = fit_epsilon(fy, fbase, fcov);
    out.eps_trace.push_back(eps.eps);

    for (std::size_t i = 0; i < n; ++i) {
      if (dd.Y[i][t - 1] == 1) {
        Qstep[t][i] = 1.0;
      } else {
        const double base = clamped_expit(q_t.beta.dot(q_design(i, true)));
        const double p = clamp(base, 1e-12, 1.0 - 1e-12);
        Qstep[t][i] = expit(logit(p) + eps.eps * Hday[t][i]);
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      Qnext[i] = dd.Y[i][t - 1] == 1 ? 1.0 : Qstep[t][i];
  }

  // baseline regression on L0 with the baseline fluctuation
  std::vector<double> Q0(n, 0.0);
  {
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      X(i, 1) = dd.l0[i];
      X(i, 2) = dd.a0[i];
      y[i] = Qnext[i];
    }
    BinaryRegressionModel q0 = fit_binary(X, y, Eigen::VectorXd::Ones(n));
    std::vector<double> fy, fbase, fcov;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd x(3);
      x << 1.0, dd.l0[i], static_cast<double>(rule_at(i, 0));
      fbase.push_back(clamped_expit(q0.beta.dot(x)));
      fy.push_back(Qnext[i]);
      fcov.push_back(Hday[0][i]);
    }
    const EpsFit eps = fit_epsilon(fy, fbase, fcov);
    out.eps_trace.push_back(eps.eps);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = clamp(fbase[i], 1e-12, 1.0 - 1e-12);
      Q0[i] = expit(logit(p) + eps.eps * Hday[0][i]);
    }
  }

  double psi = 0.0;
  for (std::size_t i = 0; i < n; ++i) psi += Q0[i];
  psi /= static_cast<double>(n);
  out.psi_hat = psi;

  // influence values from the per-day updated regressions
  out.eic.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = Q0[i] - psi;
    d += Hday[0][i] * (Qstep[1][i] - Q0[i]);
    for (int t = 1; t <= days; ++t) {
      if (Hday[t][i] == 0.0) continue;
      const double next =
          t == days ? static_cast<double>(dd.Y[i][days])
                    : (dd.Y[i][t] == 1 ? 1.0 : Qstep[t + 1][i]);
      d += Hday[t][i] * (next - Qstep[t][i]);
    }
    out.eic[i] = d;
  }
  double ss = 0.0;
  for (double d : out.eic) ss += d * d;
  out.sigma2_hat = ss / static_cast<double>(n);
  return out;
}

}  // namespace cttmle
