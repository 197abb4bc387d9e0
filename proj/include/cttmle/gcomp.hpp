#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "cttmle/nuisance.hpp"

namespace cttmle {

// ---- abstract model pieces consumed by the sweep -------------------------------

// Per-tick conditional jump probabilities, addressable by (subject, tick) so
// that targeting tilts can be applied row-wise, and evaluable at
// counterfactual states.
class HazardField {
 public:
  virtual ~HazardField() = default;
  virtual double prob(Process process, const HistorySnapshot& s, int subject,
                      int tick) const = 0;
};

// Pooled iterated-expectation model: E[Y | cov-jump indicator = delta,
// history features]. `hweight` is the clever-weight fluctuation covariate at
// the queried (subject, tick); predictions are tilted by the accumulated
// fluctuation times hweight on the logit scale.
class IteratedRegression {
 public:
  virtual ~IteratedRegression() = default;
  virtual double predict(const HistorySnapshot& s, int delta, double hweight) const = 0;
  virtual void add_fluctuation(double eps) { eps_cum_ += eps; }
  double fluctuation() const { return eps_cum_; }

 protected:
  double tilt(double base_prob, double hweight) const {
    if (eps_cum_ == 0.0 || hweight == 0.0) return base_prob;
    const double p = clamp(base_prob, 1e-12, 1.0 - 1e-12);
    return expit(logit(p) + eps_cum_ * hweight);
  }

 private:
  double eps_cum_ = 0.0;
};

class GlmIteratedRegression : public IteratedRegression {
 public:
  GlmIteratedRegression(FeatureSpec spec, BinaryRegressionModel model)
      : spec_(std::move(spec)), model_(std::move(model)) {}
  double predict(const HistorySnapshot& s, int delta, double hweight) const override;
  const BinaryRegressionModel& model() const { return model_; }

 private:
  FeatureSpec spec_;
  BinaryRegressionModel model_;  // over [features, delta]
};

class HalIteratedRegression : public IteratedRegression {
 public:
  HalIteratedRegression(FeatureSpec spec, hal::HALModel model)
      : spec_(std::move(spec)), model_(std::move(model)) {}
  double predict(const HistorySnapshot& s, int delta, double hweight) const override;

 private:
  FeatureSpec spec_;
  hal::HALModel model_;
};

// True when every feature the spec reads is a function of the compact state
// (a0, a_current, first covariate coordinate), so the plug-in recursion below
// can tabulate values over it.
bool state_compact_spec(const FeatureSpec& spec);

// Coherent substitution estimator of the iterated expectations: values are
// tabulated by backward induction over the grid from the fitted per-tick
// hazards and the covariate-transition fit, under the intervention.
class PluginIterated : public IteratedRegression {
 public:
  PluginIterated(const ModelGrid& grid, std::vector<double> l0_support,
                 const HazardModel& lam_cov, const HazardModel& lam_trt,
                 const HazardModel& lam_death, const BinaryRegressionModel& mu,
                 const Intervention& g_star);
  double predict(const HistorySnapshot& s, int delta, double hweight) const override;
  // value entering tick r at compact state
  double value_entering(std::size_t tick, std::size_t l0_idx, int a0, int a_current,
                        int l) const;
  std::size_t l0_index(double l0) const;

 private:
  std::size_t index(std::size_t tick, std::size_t b, int a0, int a, int l) const {
    return (((tick * l0_.size() + b) * 2 + a0) * 2 + a) * 2 + l;
  }
  ModelGrid grid_;
  std::vector<double> l0_;  // sorted distinct baseline covariate values
  BinaryRegressionModel mu_;
  std::vector<double> table_;  // (K + 1) x |l0| x 2 x 2 x 2
};

std::vector<double> l0_support_of(const std::vector<ObservedPath>& cohort);

// Production hazards: fitted per-tick models for the cov, trt and death
// processes plus dense per-(subject, tick) targeting offsets.
class FittedHazardField : public HazardField {
 public:
  FittedHazardField(HazardModel cov, HazardModel trt, HazardModel death,
                    std::size_t n_subjects, std::size_t n_ticks);
  double prob(Process process, const HistorySnapshot& s, int subject, int tick) const override;
  void add_tilt(Process process, int subject, int tick, double delta);
  const HazardModel& model(Process p) const;
  HazardModel& model(Process p);

 private:
  HazardModel cov_, trt_, death_;
  std::size_t n_ticks_ = 0;
  std::vector<double> tilt_[3];  // cov, trt, death
};

// ---- counterfactual state updates ------------------------------------------------

HistorySnapshot advance_state(HistorySnapshot s, double new_t);
HistorySnapshot apply_trt_jump(HistorySnapshot s, int a_new);  // jump at time s.t
HistorySnapshot apply_cov_jump(HistorySnapshot s, double l_new);

// ---- backward sweep ----------------------------------------------------------------

// Per subject x at-risk tick values of the iterated conditional expectations,
// aligned with TickFrame rows. `z` carries the data-anchored backward
// recursion (regression and fluctuation outcomes); the branch values and the
// per-subject baseline values are evaluations of the fitted components, so
// that psi_hat is the plug-in the influence-curve machinery corrects.
struct ZSweepState {
  std::vector<double> z;        // propagated value given the tick's observed outcome
  std::vector<double> z_model;  // fitted-component value at the same conditioning
  std::vector<double> pre;      // fitted-component value entering the tick
  std::vector<double> branch0;  // no-jump branch (fitted components)
  std::vector<double> branch1;  // jump branch (fitted components; death ticks: 1)
  std::vector<double> hazard;   // per-tick probability used in the mixing
  std::vector<double> z_t0;     // per-subject baseline plug-in value
  double psi_hat = 0.0;
};

ZSweepState backward_sweep(const TickFrame& frame, const HazardField& hazards,
                           const IteratedRegression& zmodel, const Intervention& g_star,
                           const std::vector<double>* hweight = nullptr);

// Model-only continuation value entering grid tick `tick` at state `s`
// (timestamped at or before that tick); recursion bottoms out at cov-tick
// anchors and the horizon.
double model_value_entering(const TickFrame& frame, const HazardField& hazards,
                            const IteratedRegression& zmodel, const Intervention& g_star,
                            const std::vector<double>* hweight, std::size_t tick,
                            HistorySnapshot s, int subject);

void write_sweep_csv(const TickFrame& frame, const ZSweepState& state, std::ostream& os);

// ---- iterated-expectation regression ----------------------------------------------

// Pooled quasi-binomial fit of current Z values at cov ticks on history
// features plus the jump indicator.
std::unique_ptr<IteratedRegression> fit_zL_regression(const TickFrame& frame,
                                                      const std::vector<double>& z_values,
                                                      const FeatureSpec& spec,
                                                      const LearnerSpec& learner);

struct InitialZOptions {
  int max_passes = 25;
  double tol = 1e-7;
  int cv_folds = 5;
};

// Self-consistent initial fit: alternate sweep and refit until the plug-in
// estimate stabilizes.
std::unique_ptr<IteratedRegression> fit_initial_z(const TickFrame& frame,
                                                  const HazardField& hazards,
                                                  const Intervention& g_star,
                                                  const FeatureSpec& spec,
                                                  const LearnerSpec& learner,
                                                  const InitialZOptions& opt = InitialZOptions());

// ---- exhaustively enumerable instances --------------------------------------------

// Linear logit over (a0, a_current, l_current, t).
struct TinyLogit {
  double intercept = 0.0, c_a0 = 0.0, c_a = 0.0, c_l = 0.0, c_t = 0.0;
  double prob(const HistorySnapshot& s) const {
    const double l = s.l_current.empty() ? 0.0 : s.l_current[0];
    return expit(intercept + c_a0 * s.a0 + c_a * s.a_current + c_l * l + c_t * s.t);
  }
};

struct TinyModel {
  double l0 = 1.0;
  double l_init = 0.0;
  double tau = 2.0;
  std::vector<Tick> ticks;  // single process per tick
  TinyLogit pi0, mu, pi;
  TinyLogit lam_cov, lam_trt, lam_cens, lam_death;

  int decision_points() const;
  void check_enumerable() const;  // TooLarge beyond 12 decision points

  HistorySnapshot baseline_state() const;
  std::vector<ObservedPath> simulate(long n, std::uint64_t seed) const;

  static TinyModel from_json_file(const std::string& filename);
  static TinyModel from_json(const std::string& text);
  std::string to_json() const;
  // randomized instance with the given tick layout size (<= 12 decision points)
  static TinyModel random(std::uint64_t seed, bool with_censoring = true);
};

// Exact g-computation value by full path enumeration.
double enumerate_gcomp(const TinyModel& model, const Intervention& g_star);

// Exact continuation value entering tick index r at state s under (model, G*).
double exact_value(const TinyModel& model, const Intervention& g_star, std::size_t tick,
                   const HistorySnapshot& s);

struct EicEnumeration {
  double P0_D_star = 0.0;
  double remainder_R2 = 0.0;
  double psi_P = 0.0;
  double psi_P0 = 0.0;
};

// Exact expectation of the canonical gradient of `model` under `truth`, and
// the exact second-order remainder via its product-difference expansion.
EicEnumeration enumerate_eic_mean(const TinyModel& model, const TinyModel& truth,
                                  const Intervention& g_star);

// Oracle model pieces backed by exact enumeration, for sweep equivalence tests.
class ExactTinyValue : public IteratedRegression {
 public:
  ExactTinyValue(const TinyModel& model, const Intervention& g_star)
      : model_(model), g_star_(g_star) {}
  double predict(const HistorySnapshot& s, int delta, double hweight) const override;

 private:
  TinyModel model_;
  Intervention g_star_;
};

class ExactTinyHazards : public HazardField {
 public:
  explicit ExactTinyHazards(const TinyModel& model) : model_(model) {}
  double prob(Process process, const HistorySnapshot& s, int subject, int tick) const override;

 private:
  TinyModel model_;
};

}  // namespace cttmle
