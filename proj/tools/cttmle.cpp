// Command-line front end: simulate cohorts, evaluate the interventional mean
// by Monte Carlo, run estimators on a cohort file, drive simulation studies,
// and run the enumeration/score verification suite.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cttmle/infer.hpp"
#include "cttmle/verify.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitInputError = 2;
constexpr int kExitEstimationError = 3;

std::uint64_t seed_with_env(std::uint64_t flag_seed) {
  const char* env = std::getenv("CTTMLE_SEED");
  if (env && *env) return std::strtoull(env, nullptr, 10);
  return flag_seed;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream os(out_path);
  if (!os) throw cttmle::IoError("cannot open " + out_path + " for writing");
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time targeted estimation toolkit"};
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "generate a cohort CSV");
  std::string sim_config, sim_out = "-";
  long sim_n = -1;
  double sim_tau = 0.0;
  std::uint64_t sim_seed = 1;
  std::string sim_intervention;
  sim->add_option("--config", sim_config, "key=value DGP configuration file");
  sim->add_option("--n", sim_n, "number of subjects");
  sim->add_option("--tau", sim_tau, "horizon in days");
  sim->add_option("--seed", sim_seed, "master seed");
  sim->add_option("--intervention", sim_intervention,
                  "simulate under this intervention instead of the observed law");
  sim->add_option("--out", sim_out, "output CSV path (default stdout)");

  // ---- oracle ----
  auto* ora = app.add_subcommand("oracle", "interventional mean by large Monte Carlo");
  std::string ora_config, ora_intervention = "static_1", ora_out = "-";
  double ora_tau = 30.0;
  long ora_nmc = 1000000;
  std::uint64_t ora_seed = 9000;
  bool ora_diff = false;
  ora->add_option("--config", ora_config, "DGP configuration file");
  ora->add_option("--tau", ora_tau, "horizon in days");
  ora->add_option("--intervention", ora_intervention, "intervention name");
  ora->add_flag("--contrast", ora_diff, "report static_1 minus static_0");
  ora->add_option("--n-mc", ora_nmc, "Monte Carlo sample size");
  ora->add_option("--seed", ora_seed, "seed");
  ora->add_option("--out", ora_out, "output JSON path");

  // ---- estimate ----
  auto* est = app.add_subcommand("estimate", "run estimators on a cohort CSV");
  std::string est_data, est_out = "-", est_estimator = "tmle", est_mode = "correct";
  double est_tau = 30.0, est_scale = 0.0;
  est->add_option("--data", est_data, "cohort CSV")->required();
  est->add_option("--tau", est_tau, "horizon in days");
  est->add_option("--estimator", est_estimator, "tmle | ipw | ltmle");
  est->add_option("--mode", est_mode, "correct | misspecified | hal | superlearner");
  est->add_option("--prob-scale", est_scale,
                  "per-tick probability scale (default 30/tau)");
  est->add_option("--out", est_out, "output JSON path");

  // ---- study ----
  auto* stu = app.add_subcommand("study", "seeded simulation study");
  std::string stu_config, stu_out = "-", stu_mode = "correct", stu_estimators = "tmle";
  std::string stu_json_out;
  long stu_n = 1000;
  double stu_tau = 30.0;
  int stu_m = 10, stu_jobs = 1;
  std::uint64_t stu_seed = 1;
  double stu_psi0 = 0.0;
  bool stu_have_psi0 = false;
  long stu_oracle_nmc = 200000;
  stu->add_option("--config", stu_config, "DGP configuration file");
  stu->add_option("--n", stu_n, "subjects per repetition");
  stu->add_option("--tau", stu_tau, "horizon in days");
  stu->add_option("--M", stu_m, "repetitions");
  stu->add_option("--seed", stu_seed, "master seed");
  stu->add_option("--mode", stu_mode, "learner mode");
  stu->add_option("--estimators", stu_estimators, "comma list: tmle,tmle_init,ipw,ltmle");
  stu->add_option("--psi0", stu_psi0, "oracle contrast (skips the Monte Carlo oracle)")
      ->each([&](const std::string&) { stu_have_psi0 = true; });
  stu->add_option("--oracle-n-mc", stu_oracle_nmc, "oracle Monte Carlo size");
  stu->add_option("--jobs", stu_jobs, "repetition-level parallelism");
  stu->add_option("--out", stu_out, "output CSV path");
  stu->add_option("--json-out", stu_json_out, "also write the JSON report here");

  // ---- verify ----
  auto* ver = app.add_subcommand("verify", "enumeration and score identity checks");
  bool ver_list = false, ver_inject = false;
  ver->add_flag("--list", ver_list, "print check names and exit");
  ver->add_flag("--inject-error", ver_inject, "perturb a hazard; checks must fail");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      cttmle::DgpConfig cfg = sim_config.empty()
                                  ? cttmle::DgpConfig::defaults(sim_tau > 0 ? sim_tau : 30.0)
                                  : cttmle::DgpConfig::from_file(sim_config);
      if (sim_n >= 0) cfg.n = sim_n;
      if (sim_tau > 0) {
        if (sim_config.empty()) cfg = cttmle::DgpConfig::defaults(sim_tau);
        cfg.tau = sim_tau;
        if (sim_n >= 0) cfg.n = sim_n;
      }
      cfg.seed = seed_with_env(sim_seed);
      std::vector<cttmle::ObservedPath> cohort;
      if (sim_intervention.empty())
        cohort = cttmle::simulate_cohort(cfg);
      else
        cohort = cttmle::simulate_under_intervention(
            cfg, cttmle::Intervention::by_name(sim_intervention));
      std::ostringstream os;
      cttmle::write_cohort_csv(cohort, os);
      emit(os.str(), sim_out);
      return kExitOk;
    }

    if (ora->parsed()) {
      cttmle::DgpConfig cfg = ora_config.empty() ? cttmle::DgpConfig::defaults(ora_tau)
                                                 : cttmle::DgpConfig::from_file(ora_config);
      const std::uint64_t seed = seed_with_env(ora_seed);
      nlohmann::json j;
      if (ora_diff) {
        const auto p1 = cttmle::true_psi(cfg, cttmle::Intervention::static_rule(1), ora_nmc, seed);
        const auto p0 = cttmle::true_psi(cfg, cttmle::Intervention::static_rule(0), ora_nmc,
                                         seed + 1);
        j["psi1"] = p1.psi;
        j["psi0"] = p0.psi;
        j["diff"] = p1.psi - p0.psi;
        j["mc_se"] = std::sqrt(p1.mc_se * p1.mc_se + p0.mc_se * p0.mc_se);
        j["n_mc"] = ora_nmc;
      } else {
        const auto p = cttmle::true_psi(cfg, cttmle::Intervention::by_name(ora_intervention),
                                        ora_nmc, seed);
        j["psi"] = p.psi;
        j["mc_se"] = p.mc_se;
        j["n_mc"] = p.n_mc;
        j["intervention"] = p.intervention;
      }
      emit(j.dump(2), ora_out);
      return kExitOk;
    }

    if (est->parsed()) {
      std::vector<cttmle::ObservedPath> cohort;
      try {
        cohort = cttmle::read_cohort_csv(est_data, est_tau);
      } catch (const cttmle::Error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInputError;
      }
      cttmle::StudyConfig sc;
      sc.dgp = cttmle::DgpConfig::defaults(est_tau);
      sc.dgp.n = static_cast<long>(cohort.size());
      if (est_scale > 0) sc.dgp.monitoring_scale = est_scale;
      sc.mode = cttmle::learner_mode_from_string(est_mode);
      sc.estimators = {est_estimator};
      try {
        const auto reps = cttmle::estimate_contrasts(cohort, sc);
        if (reps.empty() || reps.front().failed) {
          std::cerr << "estimation failed: "
                    << (reps.empty() ? "no estimator ran" : reps.front().error) << "\n";
          return kExitEstimationError;
        }
        nlohmann::json j = nlohmann::json::parse(reps.front().contrast.to_json());
        j["estimator"] = reps.front().estimator;
        emit(j.dump(2), est_out);
      } catch (const cttmle::Error& e) {
        std::cerr << "estimation failed: " << e.what() << "\n";
        return kExitEstimationError;
      }
      return kExitOk;
    }

    if (stu->parsed()) {
      cttmle::StudyConfig sc;
      sc.dgp = stu_config.empty() ? cttmle::DgpConfig::defaults(stu_tau)
                                  : cttmle::DgpConfig::from_file(stu_config);
      sc.dgp.n = stu_n;
      sc.M = stu_m;
      sc.seed = seed_with_env(stu_seed);
      sc.mode = cttmle::learner_mode_from_string(stu_mode);
      sc.jobs = stu_jobs;
      sc.estimators.clear();
      {
        std::stringstream ss(stu_estimators);
        std::string tok;
        while (std::getline(ss, tok, ',')) sc.estimators.push_back(tok);
      }
      if (stu_have_psi0) {
        sc.oracle_diff = stu_psi0;
      } else {
        const auto p1 = cttmle::true_psi(sc.dgp, cttmle::Intervention::static_rule(1),
                                         stu_oracle_nmc, sc.seed + 777);
        const auto p0 = cttmle::true_psi(sc.dgp, cttmle::Intervention::static_rule(0),
                                         stu_oracle_nmc, sc.seed + 778);
        sc.oracle_diff = p1.psi - p0.psi;
      }
      const cttmle::StudyReport report = cttmle::run_study(sc);
      emit(report.to_csv(), stu_out);
      if (!stu_json_out.empty()) emit(report.to_json(), stu_json_out);
      return kExitOk;
    }

    if (ver->parsed()) {
      if (ver_list) {
        for (const auto& name : cttmle::verify_check_names()) std::cout << name << "\n";
        return kExitOk;
      }
      const auto results = cttmle::run_verification(ver_inject);
      bool all_pass = true;
      for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.name << ": " << r.detail << "\n";
        all_pass = all_pass && r.pass;
      }
      return all_pass ? kExitOk : kExitVerifyFail;
    }
  } catch (const cttmle::ConfigError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const cttmle::IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const cttmle::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEstimationError;
  }
  return kExitInputError;
}
