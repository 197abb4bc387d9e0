#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cttmle/gcomp.hpp"

namespace cttmle {

// ---- clever weights --------------------------------------------------------------

// Cumulative likelihood-ratio factors of the intervention vs the fitted
// interventional part, per subject x tick (value entering the tick).
struct CleverWeights {
  std::vector<double> h;           // dense: subject * n_ticks + tick
  std::vector<double> full;        // full-horizon product per subject (IPW weight)
  std::size_t n_ticks = 0;
  double max_weight = 0.0;
  long zero_weight_subjects = 0;   // deviated at baseline or eventually censored/deviated
  long consistent_subjects = 0;
  long cap_activations = 0;

  double at(int subject, int tick) const {
    return h[static_cast<std::size_t>(subject) * n_ticks + tick];
  }
};

struct WeightOptions {
  double cap = 0.0;  // 0: no cap
};

CleverWeights clever_weights(const TickFrame& frame, const GFit& g_fit,
                             const Intervention& g_star,
                             const WeightOptions& opt = WeightOptions());

// ---- clever covariates --------------------------------------------------------------

// Differences of counterfactual iterated expectations per tick; derived from
// the sweep's branch values.
struct CleverCovariates {
  std::vector<double> value;  // aligned with frame rows; 0 where not applicable
};

CleverCovariates clever_covariates(const TickFrame& frame, const ZSweepState& state);

// ---- fluctuations ---------------------------------------------------------------------

struct EpsFit {
  double eps = 0.0;
  bool no_rows = false;  // NoFluctuationRows: eps pinned at 0
  std::size_t rows = 0;
};

// One-dimensional quasi-binomial offset-submodel MLE shared by all
// fluctuation steps: outcome y, offset logit(base), covariate c.
EpsFit fit_epsilon(const std::vector<double>& y, const std::vector<double>& base,
                   const std::vector<double>& covariate);

// Tilt of the pooled iterated-expectation fit along the clever weights;
// applies the update to zmodel.
EpsFit fluctuate_zL(const TickFrame& frame, const ZSweepState& state,
                    const CleverWeights& weights, IteratedRegression& zmodel);

// Tilt of one per-tick hazard along weight x covariate; applies row tilts.
EpsFit fluctuate_hazard(const TickFrame& frame, const ZSweepState& state,
                        const CleverWeights& weights, const CleverCovariates& covs,
                        Process process, FittedHazardField& hazards);

// ---- canonical gradient ------------------------------------------------------------------

std::vector<double> eic_evaluate(const TickFrame& frame, const ZSweepState& state,
                                 const CleverWeights& weights, double psi_current);

// ---- estimation bundle --------------------------------------------------------------------

enum class LearnerMode { correct, misspecified, hal, superlearner };

LearnerMode learner_mode_from_string(const std::string& s);
const char* to_string(LearnerMode mode);

struct EstimationOptions {
  LearnerMode mode = LearnerMode::correct;
  double prob_scale = 1.0;  // known per-tick probability scale of the grid
  int cv_folds = 5;
  InitialZOptions z_init;
  WeightOptions weights;
};

// Fits shared across interventions: the interventional part and the
// per-process hazards (untilted).
struct SharedFits {
  TickFrame frame;
  GFit g;
  HazardModel lam_cov, lam_trt, lam_death;
  BinaryRegressionModel mu_hat;  // covariate-transition fit at cov jumps
  bool z_plugin = false;         // tabulated substitution estimator for the Z-part
  FeatureSpec z_spec;
  LearnerSpec z_learner;
  EstimationOptions options;
};

SharedFits fit_shared_nuisance(const std::vector<ObservedPath>& cohort, const ModelGrid& grid,
                               const EstimationOptions& options);

// ---- TMLE -------------------------------------------------------------------------------------

struct TmleOptions {
  int max_iter = 50;
  double s_n_override = 0.0;  // > 0 replaces the default threshold
  bool freeze_sigma = false;  // keep the m = 0 variance in the stopping rule
};

struct TmleResult {
  double psi_star = 0.0;
  double psi_init = 0.0;
  double sigma2_hat = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> eic_mean_trace;
  std::vector<double> eic;  // per-subject influence values at the final iterate
  double max_weight = 0.0;
  long zero_weight_subjects = 0;
  long cap_activations = 0;
  std::string to_json() const;
};

TmleResult run_tmle(const SharedFits& fits, const Intervention& g_star,
                    const TmleOptions& options = TmleOptions());

}  // namespace cttmle
