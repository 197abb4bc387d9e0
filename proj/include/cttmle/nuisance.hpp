#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cttmle/events.hpp"
#include "cttmle/hal.hpp"

namespace cttmle {

// ---- quasi-binomial GLM -------------------------------------------------------

// Logistic-link regression; when prob_scale = s != 1 the mean is s * expit(lp)
// truncated just below 1, matching per-tick probabilities that are a known
// multiple of a logistic term.
struct BinaryRegressionModel {
  FeatureSpec spec;  // may be unnamed when fitted on a raw design
  Eigen::VectorXd beta;
  double prob_scale = 1.0;
  bool separated = false;  // SeparationWarning: clamped, reported, continued
  bool fitted = false;

  double linear_predictor(const Eigen::VectorXd& x) const;
  double predict_row(const Eigen::VectorXd& x, double offset = 0.0) const;
  double predict(const HistorySnapshot& s, double offset = 0.0) const;
  std::string to_json() const;
};

BinaryRegressionModel fit_binary(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& weights,
                                 const Eigen::VectorXd* offset = nullptr,
                                 double prob_scale = 1.0);

// ---- learners ------------------------------------------------------------------

struct LearnerSpec {
  enum class Kind { glm, hal, intercept_only };
  Kind kind = Kind::glm;
  std::string feature_spec = "default";
  hal::HalOptions hal_options;

  static LearnerSpec glm(const std::string& spec) { return {Kind::glm, spec, {}}; }
  static LearnerSpec intercept() { return {Kind::intercept_only, "intercept_only", {}}; }
  static LearnerSpec hal_learner(const std::string& spec = "default") {
    return {Kind::hal, spec, {}};
  }
};

struct CvChoice {
  int index = 0;
  std::vector<double> risks;
};

// V-fold cross-validation over candidate learners on a shared design problem;
// quasi-binomial loss, ties to the earliest candidate.
CvChoice cv_select(const std::vector<LearnerSpec>& candidates, int V,
                   const std::vector<HistorySnapshot>& rows, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& weights, double prob_scale = 1.0,
                   std::uint64_t fold_seed = 1);

// ---- risk-set frame ---------------------------------------------------------------

// One potential jump tick for one subject: the subject is at risk (alive,
// uncensored) just before the tick, and exactly one process can jump there.
struct TickRow {
  int subject = 0;
  int tick = 0;  // index into ModelGrid
  Process process = Process::cov;
  bool jump = false;
  int a_mark = 0;                // observed A(t) when process == trt and jump
  double l_mark = 0.0;           // observed new L (first coord) when cov jump
  HistorySnapshot state;         // observed left-limit state
};

struct TickFrame {
  ModelGrid grid;
  std::vector<ObservedPath> const* cohort = nullptr;
  std::vector<TickRow> rows;                          // subject-major, tick order
  std::vector<std::pair<std::size_t, std::size_t>> subject_rows;  // [begin, end) per subject
  int l0_dim = 1;
  int l_dim = 1;

  std::size_t n_subjects() const { return subject_rows.size(); }
  // dense (subject, tick) -> row lookup; -1 when the subject is not at risk
  std::vector<int> row_of;
  int row_index(int subject, int tick) const {
    return row_of[static_cast<std::size_t>(subject) * grid.ticks.size() + tick];
  }
};

TickFrame build_tick_frame(const std::vector<ObservedPath>& cohort, const ModelGrid& grid);

// ---- hazards ------------------------------------------------------------------------

struct HazardModel {
  Process process = Process::cov;
  std::variant<BinaryRegressionModel, hal::HALModel> predictor;
  FeatureSpec spec;
  double prob_scale = 1.0;
  mutable long clamp_activations = 0;

  // per-tick conditional jump probability in [0, 1 - 1e-8]
  double tick_prob(const HistorySnapshot& s) const;
  std::string to_json() const;
};

HazardModel fit_hazard(const TickFrame& frame, Process process, const LearnerSpec& learner,
                       double prob_scale = 1.0, int cv_folds = 5);
HazardModel fit_hazard(const TickFrame& frame, Process process,
                       const std::vector<LearnerSpec>& candidates, double prob_scale,
                       int cv_folds);

// Treatment assignment P(A(t) = 1 | history) fit at trt-monitor events only.
BinaryRegressionModel fit_treatment_mechanism(const TickFrame& frame,
                                              const LearnerSpec& learner, int cv_folds = 5);
// Baseline assignment P(A0 = 1 | L0).
BinaryRegressionModel fit_baseline_treatment(const std::vector<ObservedPath>& cohort,
                                             const FeatureSpec& spec);

// Interventional part of the likelihood: baseline assignment, time-varying
// assignment, and the censoring hazard.
struct GFit {
  BinaryRegressionModel baseline_pi;
  BinaryRegressionModel pi_hat;
  HazardModel censor_hazard;

  double pi_rule(const HistorySnapshot& s, int rule_value) const;
  double pi0_rule(const HistorySnapshot& s, int rule_value) const;
};

GFit fit_g(const std::vector<ObservedPath>& cohort, const TickFrame& frame,
           const LearnerSpec& pi_learner, const LearnerSpec& censor_learner,
           double prob_scale = 1.0);

// Exact interventional part from known generating probabilities (for oracle
// weight checks).
class DgpConfig;  // fwd

}  // namespace cttmle
