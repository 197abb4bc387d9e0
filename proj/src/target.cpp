#include "cttmle/target.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace cttmle {

// ---- clever weights ---------------------------------------------------------------

CleverWeights clever_weights(const TickFrame& frame, const GFit& g_fit,
                             const Intervention& g_star, const WeightOptions& opt) {
  const std::size_t K = frame.grid.ticks.size();
  const std::size_t n = frame.n_subjects();
  CleverWeights cw;
  cw.n_ticks = K;
  cw.h.assign(n * K, 0.0);
  cw.full.assign(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const ObservedPath& path = (*frame.cohort)[i];
    HistorySnapshot base;
    base.l0 = path.l0;
    base.a0 = path.a0;
    base.a_current = path.a0;
    base.l_current = default_l_current(path.l0);
    base.t = 0.0;
    base.tau = path.tau;
    const int rule_a0 = g_star.rule(base);

    double w = 0.0;
    if (path.a0 == rule_a0) {
      const double pi0 = g_fit.pi0_rule(base, rule_a0);
      if (pi0 < 1e-12) throw ZeroDenominator("baseline assignment probability near zero");
      w = 1.0 / pi0;
    }
    bool hit_zero = (w == 0.0);
    for (std::size_t r = 0; r < K; ++r) {
      if (opt.cap > 0.0 && w > opt.cap) {
        w = opt.cap;
        ++cw.cap_activations;
      }
      cw.h[i * K + r] = w;
      cw.max_weight = std::max(cw.max_weight, w);
      const int row_idx = frame.row_index(static_cast<int>(i), static_cast<int>(r));
      if (row_idx < 0 || w == 0.0) {
        if (row_idx >= 0 && w == 0.0) continue;
        continue;
      }
      const TickRow& row = frame.rows[row_idx];
      if (row.process == Process::cens) {
        if (row.jump) {
          w = 0.0;
          hit_zero = true;
        } else {
          const double surv = 1.0 - g_fit.censor_hazard.tick_prob(row.state);
          if (surv < 1e-12) throw ZeroDenominator("censoring survival near zero");
          w /= surv;
        }
      } else if (row.process == Process::trt && row.jump) {
        const int rule_a = g_star.rule(row.state);
        if (row.a_mark != rule_a) {
          w = 0.0;
          hit_zero = true;
        } else {
          const double pi = g_fit.pi_rule(row.state, rule_a);
          if (pi < 1e-12) throw ZeroDenominator("assignment probability near zero");
          w /= pi;
        }
      }
    }
    if (opt.cap > 0.0 && w > opt.cap) {
      w = opt.cap;
      ++cw.cap_activations;
    }
    cw.full[i] = w;
    cw.max_weight = std::max(cw.max_weight, w);
    if (hit_zero)
      ++cw.zero_weight_subjects;
    else
      ++cw.consistent_subjects;
  }
  return cw;
}

// ---- clever covariates ---------------------------------------------------------------

CleverCovariates clever_covariates(const TickFrame& frame, const ZSweepState& state) {
  CleverCovariates cc;
  cc.value.assign(frame.rows.size(), 0.0);
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    switch (frame.rows[r].process) {
      case Process::cov:
      case Process::trt:
        cc.value[r] = state.branch1[r] - state.branch0[r];
        break;
      case Process::death:
        cc.value[r] = 1.0 - state.branch0[r];
        break;
      case Process::cens:
        break;
    }
  }
  return cc;
}

// ---- epsilon fits -----------------------------------------------------------------------

EpsFit fit_epsilon(const std::vector<double>& y, const std::vector<double>& base,
                   const std::vector<double>& covariate) {
  EpsFit out;
  out.rows = y.size();
  if (y.empty()) {
    out.no_rows = true;
    return out;
  }
  std::vector<double> off(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    off[i] = logit(clamp(base[i], 1e-12, 1.0 - 1e-12));

  auto score_and_hess = [&](double eps, double& score, double& hess) {
    score = 0.0;
    hess = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double p = expit(clamp(off[i] + eps * covariate[i], -35.0, 35.0));
      score += covariate[i] * (y[i] - p);
      hess -= covariate[i] * covariate[i] * p * (1.0 - p);
    }
  };

  double eps = 0.0;
  bool ok = false;
  for (int it = 0; it < 100; ++it) {
    double score, hess;
    score_and_hess(eps, score, hess);
    if (std::abs(score) < 1e-12 * std::max<double>(1.0, y.size())) {
      ok = true;
      break;
    }
    if (hess >= -1e-300) break;
    double step = -score / hess;
    step = clamp(step, -2.0, 2.0);  // damping
    eps = clamp(eps + step, -10.0, 10.0);
    if (std::abs(step) < 1e-12) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    // bracketing fallback: the score is monotone decreasing in eps
    double lo = -10.0, hi = 10.0;
    double score, hess;
    score_and_hess(lo, score, hess);
    const double s_lo = score;
    score_and_hess(hi, score, hess);
    if (s_lo < 0.0)
      eps = -10.0;
    else if (score > 0.0)
      eps = 10.0;
    else {
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        score_and_hess(mid, score, hess);
        if (score > 0.0)
          lo = mid;
        else
          hi = mid;
        if (hi - lo < 1e-13) break;
      }
      eps = 0.5 * (lo + hi);
    }
  }
  out.eps = eps;
  return out;
}

EpsFit fluctuate_zL(const TickFrame& frame, const ZSweepState& state,
                    const CleverWeights& weights, IteratedRegression& zmodel) {
  std::vector<double> y, base, cov;
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    const TickRow& row = frame.rows[r];
    if (row.process != Process::cov || !row.jump) continue;
    const double h = weights.at(row.subject, row.tick);
    if (h <= 0.0) continue;
    y.push_back(state.z_model[r]);     // Z_t at the realized covariate value
    base.push_back(state.branch1[r]);  // Z_{t,L} at the jump branch
    cov.push_back(h);
  }
  EpsFit fit = fit_epsilon(y, base, cov);
  if (!fit.no_rows) zmodel.add_fluctuation(fit.eps);
  return fit;
}

EpsFit fluctuate_hazard(const TickFrame& frame, const ZSweepState& state,
                        const CleverWeights& weights, const CleverCovariates& covs,
                        Process process, FittedHazardField& hazards) {
  std::vector<double> y, base, cov;
  std::vector<std::size_t> row_ids;
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    const TickRow& row = frame.rows[r];
    if (row.process != process) continue;
    const double c = weights.at(row.subject, row.tick) * covs.value[r];
    if (c == 0.0) continue;
    y.push_back(row.jump ? 1.0 : 0.0);
    base.push_back(state.hazard[r]);
    cov.push_back(c);
    row_ids.push_back(r);
  }
  EpsFit fit = fit_epsilon(y, base, cov);
  if (!fit.no_rows && fit.eps != 0.0) {
    for (std::size_t k = 0; k < row_ids.size(); ++k) {
      const TickRow& row = frame.rows[row_ids[k]];
      hazards.add_tilt(process, row.subject, row.tick, fit.eps * cov[k]);
    }
  }
  return fit;
}

// ---- canonical gradient ----------------------------------------------------------------------

std::vector<double> eic_evaluate(const TickFrame& frame, const ZSweepState& state,
                                 const CleverWeights& weights, double psi_current) {
  const std::size_t n = frame.n_subjects();
  std::vector<double> eic(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eic[i] = state.z_t0[i] - psi_current;
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    const TickRow& row = frame.rows[r];
    const double h = weights.at(row.subject, row.tick);
    if (h == 0.0) continue;
    double term = 0.0;
    switch (row.process) {
      case Process::cov: {
        const double h_l = state.branch1[r] - state.branch0[r];
        if (row.jump) term += h * (state.z_model[r] - state.branch1[r]);
        term += h * h_l * ((row.jump ? 1.0 : 0.0) - state.hazard[r]);
        break;
      }
      case Process::trt: {
        const double h_a = state.branch1[r] - state.branch0[r];
        term += h * h_a * ((row.jump ? 1.0 : 0.0) - state.hazard[r]);
        break;
      }
      case Process::death: {
        const double h_d = 1.0 - state.branch0[r];
        term += h * h_d * ((row.jump ? 1.0 : 0.0) - state.hazard[r]);
        break;
      }
      case Process::cens:
        break;
    }
    eic[row.subject] += term;
  }
  return eic;
}

// ---- estimation bundle -------------------------------------------------------------------------

LearnerMode learner_mode_from_string(const std::string& s) {
  if (s == "correct") return LearnerMode::correct;
  if (s == "misspecified") return LearnerMode::misspecified;
  if (s == "hal") return LearnerMode::hal;
  if (s == "superlearner") return LearnerMode::superlearner;
  throw ConfigError("unknown learner mode: " + s);
}

const char* to_string(LearnerMode mode) {
  switch (mode) {
    case LearnerMode::correct: return "correct";
    case LearnerMode::misspecified: return "misspecified";
    case LearnerMode::hal: return "hal";
    case LearnerMode::superlearner: return "superlearner";
  }
  return "?";
}

// Covariate-transition fit: P(new L = 1 | history) at covariate-monitoring jumps.
static BinaryRegressionModel fit_mu(const TickFrame& frame, const std::string& spec_name) {
  std::vector<const HistorySnapshot*> rows;
  std::vector<double> yv;
  for (const auto& r : frame.rows) {
    if (r.process != Process::cov || !r.jump) continue;
    rows.push_back(&r.state);
    yv.push_back(r.l_mark);
  }
  if (rows.empty()) throw EmptyRiskSet("no covariate-monitoring jumps");
  FeatureSpec spec = FeatureSpec::named(spec_name);
  spec.bind(frame.l0_dim, frame.l_dim, frame.grid.tau);
  Eigen::MatrixXd X(rows.size(), spec.dim());
  std::vector<double> buf(spec.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    spec.emit(*rows[i], buf.data());
    for (std::size_t j = 0; j < buf.size(); ++j) X(i, j) = buf[j];
  }
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), yv.size());
  BinaryRegressionModel m = fit_binary(X, y, Eigen::VectorXd::Ones(y.size()));
  m.spec = spec;
  return m;
}

SharedFits fit_shared_nuisance(const std::vector<ObservedPath>& cohort, const ModelGrid& grid,
                               const EstimationOptions& options) {
  SharedFits out;
  out.options = options;
  out.frame = build_tick_frame(cohort, grid);
  const double scale = options.prob_scale;

  auto glm = LearnerSpec::glm("default");
  auto pick = [&](const char* correct_spec) {
    switch (options.mode) {
      case LearnerMode::correct:
      case LearnerMode::misspecified: return LearnerSpec::glm(correct_spec);
      case LearnerMode::hal: return LearnerSpec::hal_learner("default");
      case LearnerMode::superlearner: return glm;  // resolved below via cv_select
    }
    return glm;
  };

  if (options.mode == LearnerMode::superlearner) {
    const std::vector<LearnerSpec> base = {LearnerSpec::glm("default"),
                                           LearnerSpec::intercept()};
    auto with_correct = [&](const char* spec) {
      std::vector<LearnerSpec> cands = {LearnerSpec::glm(spec)};
      cands.insert(cands.end(), base.begin(), base.end());
      return cands;
    };
    out.lam_cov = fit_hazard(out.frame, Process::cov, with_correct("haz_l_correct"), scale,
                             options.cv_folds);
    out.lam_trt = fit_hazard(out.frame, Process::trt, with_correct("haz_a_correct"), scale,
                             options.cv_folds);
    out.lam_death = fit_hazard(out.frame, Process::death, with_correct("haz_d_correct"), scale,
                               options.cv_folds);
    out.g = fit_g(cohort, out.frame, LearnerSpec::glm("pi_correct"),
                  LearnerSpec::glm("haz_c_correct"), scale);
  } else {
    const char* death_spec = options.mode == LearnerMode::misspecified
                                 ? "haz_d_misspecified"
                                 : "haz_d_correct";
    out.lam_cov = fit_hazard(out.frame, Process::cov, pick("haz_l_correct"), scale);
    out.lam_trt = fit_hazard(out.frame, Process::trt, pick("haz_a_correct"), scale);
    out.lam_death = fit_hazard(out.frame, Process::death, pick(death_spec), scale);
    const LearnerSpec pi_learner = options.mode == LearnerMode::hal
                                       ? LearnerSpec::hal_learner("default")
                                       : LearnerSpec::glm("pi_correct");
    out.g = fit_g(cohort, out.frame, pi_learner, LearnerSpec::glm("haz_c_correct"), scale);
  }

  // The substitution estimator for the iterated expectations: tabulated from
  // the fitted hazards plus the covariate-transition fit when every component
  // is a function of the compact state; pooled regression otherwise.
  const char* z_spec_name =
      options.mode == LearnerMode::misspecified ? "z_misspecified" : "default";
  out.z_spec = FeatureSpec::named(z_spec_name);
  out.z_spec.bind(out.frame.l0_dim, out.frame.l_dim, out.frame.grid.tau);
  out.z_learner = options.mode == LearnerMode::hal ? LearnerSpec::hal_learner("default")
                                                   : LearnerSpec::glm(z_spec_name);
  if (options.mode == LearnerMode::correct || options.mode == LearnerMode::misspecified) {
    const char* mu_spec =
        options.mode == LearnerMode::misspecified ? "mu_misspecified" : "mu_correct";
    out.mu_hat = fit_mu(out.frame, mu_spec);
    out.z_plugin = state_compact_spec(out.lam_cov.spec) && state_compact_spec(out.lam_trt.spec) &&
                   state_compact_spec(out.lam_death.spec) && state_compact_spec(out.mu_hat.spec);
  }
  return out;
}

// ---- TMLE ---------------------------------------------------------------------------------------

std::string TmleResult::to_json() const {
  nlohmann::json j;
  j["psi_star"] = psi_star;
  j["psi_init"] = psi_init;
  j["sigma2_hat"] = sigma2_hat;
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["eic_mean_trace"] = eic_mean_trace;
  j["weight_diagnostics"] = {{"max_weight", max_weight},
                             {"zero_weight_subjects", zero_weight_subjects},
                             {"cap_activations", cap_activations}};
  return j.dump();
}

TmleResult run_tmle(const SharedFits& fits, const Intervention& g_star,
                    const TmleOptions& options) {
  const TickFrame& frame = fits.frame;
  const std::size_t n = frame.n_subjects();
  if (n == 0) throw EmptyRiskSet("empty cohort");

  FittedHazardField hazards(fits.lam_cov, fits.lam_trt, fits.lam_death, n,
                            frame.grid.ticks.size());
  const CleverWeights weights = clever_weights(frame, fits.g, g_star, fits.options.weights);
  std::unique_ptr<IteratedRegression> zmodel;
  if (fits.z_plugin)
    zmodel = std::make_unique<PluginIterated>(frame.grid, l0_support_of(*frame.cohort),
                                              fits.lam_cov, fits.lam_trt, fits.lam_death,
                                              fits.mu_hat, g_star);
  else
    zmodel = fit_initial_z(frame, hazards, g_star, fits.z_spec, fits.z_learner,
                           fits.options.z_init);

  TmleResult res;
  res.max_weight = weights.max_weight;
  res.zero_weight_subjects = weights.zero_weight_subjects;
  res.cap_activations = weights.cap_activations;

  double sigma_frozen = -1.0;
  double best_abs_mean = 1e300;
  const double logn = std::max(std::log(static_cast<double>(n)), 1.0);
  for (int m = 0; m <= options.max_iter; ++m) {
    const ZSweepState state = backward_sweep(frame, hazards, *zmodel, g_star, &weights.h);
    const std::vector<double> eic = eic_evaluate(frame, state, weights, state.psi_hat);
    double mean = 0.0, second = 0.0;
    for (double d : eic) {
      mean += d;
      second += d * d;
    }
    mean /= static_cast<double>(n);
    second /= static_cast<double>(n);
    res.eic_mean_trace.push_back(mean);
    if (m == 0) {
      res.psi_init = state.psi_hat;
      sigma_frozen = std::sqrt(second);
    }
    const double sigma = options.freeze_sigma ? sigma_frozen : std::sqrt(second);
    const double s_n = options.s_n_override > 0.0
                           ? options.s_n_override
                           : sigma / (std::sqrt(static_cast<double>(n)) * logn);

    if (std::abs(mean) <= best_abs_mean) {
      best_abs_mean = std::abs(mean);
      res.psi_star = state.psi_hat;
      res.sigma2_hat = second;
      res.eic = eic;
      res.iterations = m;
    }
    if (std::abs(mean) < s_n) {
      res.converged = true;
      res.psi_star = state.psi_hat;
      res.sigma2_hat = second;
      res.eic = eic;
      res.iterations = m;
      break;
    }
    if (m == options.max_iter) break;

    const CleverCovariates covs = clever_covariates(frame, state);
    fluctuate_zL(frame, state, weights, *zmodel);
    fluctuate_hazard(frame, state, weights, covs, Process::cov, hazards);
    fluctuate_hazard(frame, state, weights, covs, Process::trt, hazards);
    fluctuate_hazard(frame, state, weights, covs, Process::death, hazards);
  }
  return res;
}

}  // namespace cttmle
