#include "cttmle/infer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace cttmle {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile needs p in (0,1)");
  // Wichura (1988), algorithm AS 241, PPND16
  const double q = p - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

ConfidenceInterval confidence_interval(double psi, double sigma2, long n, double level) {
  if (sigma2 < 0.0 || n < 1 || !(level > 0.0 && level < 1.0))
    throw ConfigError("bad confidence interval inputs");
  const double z = normal_quantile(0.5 * (1.0 + level));
  const double half = z * std::sqrt(sigma2 / static_cast<double>(n));
  return {psi - half, psi + half};
}

std::string ContrastResult::to_json() const {
  nlohmann::json j;
  j["psi1"] = psi1;
  j["psi0"] = psi0;
  j["diff"] = diff;
  j["sigma2_diff"] = sigma2_diff;
  j["ci_lower"] = ci_lower;
  j["ci_upper"] = ci_upper;
  j["level"] = level;
  j["n"] = n;
  return j.dump();
}

ContrastResult contrast(double psi1, const std::vector<double>& eic1, double psi0,
                        const std::vector<double>& eic0, double level) {
  if (eic1.size() != eic0.size() || eic1.empty())
    throw MisalignedCohorts("influence vectors must come from one cohort");
  ContrastResult out;
  out.psi1 = psi1;
  out.psi0 = psi0;
  out.diff = psi1 - psi0;
  out.level = level;
  out.n = static_cast<long>(eic1.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < eic1.size(); ++i) mean += eic1[i] - eic0[i];
  mean /= static_cast<double>(eic1.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < eic1.size(); ++i) {
    const double d = eic1[i] - eic0[i] - mean;
    ss += d * d;
  }
  out.sigma2_diff = ss / static_cast<double>(eic1.size());
  const ConfidenceInterval ci = confidence_interval(out.diff, out.sigma2_diff, out.n, level);
  out.ci_lower = ci.lo;
  out.ci_upper = ci.hi;
  return out;
}

// ---- studies ------------------------------------------------------------------------------

std::vector<RepEstimate> estimate_contrasts(const std::vector<ObservedPath>& cohort,
                                            const StudyConfig& config) {
  std::vector<RepEstimate> out;
  const Intervention g1 = Intervention::static_rule(1);
  const Intervention g0 = Intervention::static_rule(0);
  const ModelGrid grid = ModelGrid::daily(config.dgp.tau);

  bool need_tmle = false, need_ipw = false, need_ltmle = false, need_init = false;
  for (const auto& e : config.estimators) {
    if (e == "tmle") need_tmle = true;
    else if (e == "tmle_init") need_init = true;
    else if (e == "ipw") need_ipw = true;
    else if (e == "ltmle") need_ltmle = true;
    else throw ConfigError("unknown estimator: " + e);
  }

  SharedFits fits;
  bool fits_ready = false;
  auto ensure_fits = [&]() {
    if (fits_ready) return;
    EstimationOptions opts;
    opts.mode = config.mode;
    opts.prob_scale = config.dgp.monitoring_scale;
    fits = fit_shared_nuisance(cohort, grid, opts);
    fits_ready = true;
  };

  if (need_tmle || need_init) {
    RepEstimate rep;
    rep.estimator = "tmle";
    RepEstimate rep_init;
    rep_init.estimator = "tmle_init";
    try {
      ensure_fits();
      const TmleResult r1 = run_tmle(fits, g1, config.tmle);
      const TmleResult r0 = run_tmle(fits, g0, config.tmle);
      rep.contrast = contrast(r1.psi_star, r1.eic, r0.psi_star, r0.eic, config.level);
      rep.sigma_diff = std::sqrt(rep.contrast.sigma2_diff);
      rep_init.contrast = rep.contrast;  // reuse the influence-based CI machinery
      rep_init.contrast.psi1 = r1.psi_init;
      rep_init.contrast.psi0 = r0.psi_init;
      rep_init.contrast.diff = r1.psi_init - r0.psi_init;
      rep_init.contrast.ci_lower = 0.0;
      rep_init.contrast.ci_upper = 0.0;
      rep_init.sigma_diff = rep.sigma_diff;
    } catch (const Error& e) {
      rep.failed = true;
      rep.error = e.what();
      rep_init.failed = true;
      rep_init.error = e.what();
    }
    if (need_tmle) out.push_back(rep);
    if (need_init) out.push_back(rep_init);
  }
  if (need_ipw) {
    RepEstimate rep;
    rep.estimator = "ipw";
    try {
      ensure_fits();
      const IpwResult r1 = ipw_estimate(fits.frame, fits.g, g1);
      const IpwResult r0 = ipw_estimate(fits.frame, fits.g, g0);
      rep.contrast = contrast(r1.psi_hat, r1.eic, r0.psi_hat, r0.eic, config.level);
      rep.sigma_diff = std::sqrt(rep.contrast.sigma2_diff);
    } catch (const Error& e) {
      rep.failed = true;
      rep.error = e.what();
    }
    out.push_back(rep);
  }
  if (need_ltmle) {
    RepEstimate rep;
    rep.estimator = "ltmle";
    try {
      const int days = static_cast<int>(std::llround(config.dgp.tau));
      LtmleOptions lopt;
      lopt.misspecified = config.mode == LearnerMode::misspecified;
      const LtmleResult r1 = ltmle_discrete(cohort, days, g1, lopt);
      const LtmleResult r0 = ltmle_discrete(cohort, days, g0, lopt);
      rep.contrast = contrast(r1.psi_hat, r1.eic, r0.psi_hat, r0.eic, config.level);
      rep.sigma_diff = std::sqrt(rep.contrast.sigma2_diff);
    } catch (const Error& e) {
      rep.failed = true;
      rep.error = e.what();
    }
    out.push_back(rep);
  }
  return out;
}

StudyReport run_study(const StudyConfig& config) {
  if (config.M < 1) throw ConfigError("M must be >= 1");
  std::vector<std::vector<RepEstimate>> reps(config.M);
  parallel_for(config.M, config.jobs, [&](std::size_t r) {
    DgpConfig dgp = config.dgp;
    dgp.seed = derive_seed(config.seed, r);
    const std::vector<ObservedPath> cohort = simulate_cohort(dgp);
    reps[r] = estimate_contrasts(cohort, config);
  });

  StudyReport report;
  std::vector<std::string> names;
  for (const auto& e : config.estimators)
    if (std::find(names.begin(), names.end(), e) == names.end()) names.push_back(e);

  for (const auto& name : names) {
    StudyRow row;
    row.estimator = name;
    row.tau = config.dgp.tau;
    row.n = config.dgp.n;
    row.M = config.M;
    row.psi0 = config.oracle_diff;
    std::vector<double> ests, sigmas;
    long covered = 0, with_ci = 0;
    for (const auto& rep_set : reps) {
      for (const auto& rep : rep_set) {
        if (rep.estimator != name) continue;
        if (rep.failed) {
          ++row.failures;
          continue;
        }
        ests.push_back(rep.contrast.diff);
        sigmas.push_back(rep.sigma_diff);
        if (name != "tmle_init") {
          ++with_ci;
          if (config.oracle_diff >= rep.contrast.ci_lower &&
              config.oracle_diff <= rep.contrast.ci_upper)
            ++covered;
        }
      }
    }
    if (!ests.empty()) {
      double mean = 0.0;
      for (double e : ests) mean += e;
      mean /= static_cast<double>(ests.size());
      double mse = 0.0, var = 0.0;
      for (double e : ests) {
        mse += (e - config.oracle_diff) * (e - config.oracle_diff);
        var += (e - mean) * (e - mean);
      }
      mse /= static_cast<double>(ests.size());
      var /= std::max<std::size_t>(1, ests.size() - 1);
      double msig = 0.0;
      for (double s : sigmas) msig += s;
      msig /= static_cast<double>(sigmas.size());
      row.mean_est = mean;
      row.bias = mean - config.oracle_diff;
      row.sqrt_mse = std::sqrt(mse);
      row.mean_sigma = msig;
      row.sd_est = std::sqrt(var);
      row.coverage = with_ci > 0 ? static_cast<double>(covered) / with_ci : -1.0;
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string StudyReport::to_csv() const {
  std::ostringstream os;
  os << "estimator,tau,n,M,psi0,mean_est,bias,coverage,sqrt_mse,mean_sigma,failures\n";
  for (const auto& r : rows) {
    os << r.estimator << ',' << r.tau << ',' << r.n << ',' << r.M << ',' << r.psi0 << ','
       << r.mean_est << ',' << r.bias << ',';
    if (r.coverage >= 0.0)
      os << r.coverage;
    else
      os << "nan";
    os << ',' << r.sqrt_mse << ',' << r.mean_sigma << ',' << r.failures << "\n";
  }
  return os.str();
}

std::string StudyReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"estimator", r.estimator},
                   {"tau", r.tau},
                   {"n", r.n},
                   {"M", r.M},
                   {"psi0", r.psi0},
                   {"mean_est", r.mean_est},
                   {"bias", r.bias},
                   {"coverage", r.coverage},
                   {"sqrt_mse", r.sqrt_mse},
                   {"mean_sigma", r.mean_sigma},
                   {"failures", r.failures},
                   {"sd_est", r.sd_est}});
  }
  return arr.dump(2);
}

}  // namespace cttmle
