#include "cttmle/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace cttmle {

// ---- BinaryRegressionModel ----------------------------------------------------

double BinaryRegressionModel::linear_predictor(const Eigen::VectorXd& x) const {
  if (!fitted) throw UnfittedModel("binary regression model not fitted");
  return clamp(beta.dot(x), -kLinPredClamp, kLinPredClamp);
}

double BinaryRegressionModel::predict_row(const Eigen::VectorXd& x, double offset) const {
  const double lp = clamp(beta.dot(x) + offset, -kLinPredClamp, kLinPredClamp);
  return clamp(prob_scale * expit(lp), 0.0, kHazardCeil);
}

double BinaryRegressionModel::predict(const HistorySnapshot& s, double offset) const {
  double buf[64];
  const std::size_t p = spec.dim();
  if (p > 64) throw ConfigError("feature spec too wide");
  spec.emit(s, buf);
  double lp = offset;
  const double* b = beta.data();
  for (std::size_t j = 0; j < p; ++j) lp += b[j] * buf[j];
  lp = clamp(lp, -kLinPredClamp, kLinPredClamp);
  return clamp(prob_scale * expit(lp), 0.0, kHazardCeil);
}

std::string BinaryRegressionModel::to_json() const {
  nlohmann::json j;
  j["feature_spec"] = spec.name();
  j["features"] = spec.items();
  j["coefficients"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["prob_scale"] = prob_scale;
  j["separated"] = separated;
  return j.dump();
}

BinaryRegressionModel fit_binary(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& weights, const Eigen::VectorXd* offset,
                                 double prob_scale) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n < 1) throw DegenerateDesign("no rows");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] < 0.0 || y[i] > 1.0) throw DegenerateDesign("outcome outside [0,1]");
    if (weights[i] < 0.0) throw DegenerateDesign("negative weight");
  }

  // collinearity is detected on the raw design once, up front
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw DegenerateDesign("rank-deficient design matrix");
  }

  BinaryRegressionModel model;
  model.beta = Eigen::VectorXd::Zero(p);
  model.prob_scale = prob_scale;
  model.fitted = true;

  const double wsum = weights.sum();
  if (wsum <= 0.0) throw DegenerateDesign("zero total weight");
  // start at the scaled-mean-matching intercept when the design has one
  for (Eigen::Index j = 0; j < p; ++j) {
    if ((X.col(j).array() == 1.0).all()) {
      const double ybar = weights.dot(y) / wsum;
      model.beta[j] = logit(clamp(ybar / prob_scale, 1e-6, 1.0 - 1e-6));
      break;
    }
  }

  // mean is min(prob_scale * expit(eta), ceiling); saturated rows carry no
  // score or information
  Eigen::VectorXd eta_buf(n);
  auto eval = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& score_eta,
                  Eigen::VectorXd& fisher_w, double& loglik) {
    loglik = 0.0;
    eta_buf.noalias() = X * beta;
    if (offset) eta_buf += *offset;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = clamp(eta_buf[i], -kLinPredClamp, kLinPredClamp);
      const double q = expit(eta);
      const double raw = prob_scale * q;
      const bool saturated = raw >= kHazardCeil;
      const double pr = saturated ? kHazardCeil : std::max(raw, 1e-12);
      const double w = weights[i];
      loglik += w * (y[i] * std::log(pr) + (1.0 - y[i]) * std::log(1.0 - pr));
      const double dp = saturated ? 0.0 : prob_scale * q * (1.0 - q);
      score_eta[i] = w * (y[i] / pr - (1.0 - y[i]) / (1.0 - pr)) * dp;
      fisher_w[i] = w * dp * dp / (pr * (1.0 - pr));
    }
  };

  Eigen::VectorXd score_eta(n), fisher_w(n);
  double loglik = 0.0;
  eval(model.beta, score_eta, fisher_w, loglik);

  const double score_tol = 1e-9;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd score = X.transpose() * score_eta;
    // coefficients pinned at the clamp cannot zero their score component
    double active_score = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const bool pinned_hi = model.beta[j] >= kLinPredClamp && score[j] > 0.0;
      const bool pinned_lo = model.beta[j] <= -kLinPredClamp && score[j] < 0.0;
      if (!pinned_hi && !pinned_lo) active_score = std::max(active_score, std::abs(score[j]));
    }
    if (active_score < score_tol) break;

    Eigen::MatrixXd info = X.transpose() * fisher_w.asDiagonal() * X;
    const double ridge = 1e-10 * std::max(info.trace() / p, 1.0);
    info.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw DegenerateDesign("information solve failed");
    Eigen::VectorXd step = ldlt.solve(score);

    // damped step: halve until the likelihood does not decrease
    double scale = 1.0;
    Eigen::VectorXd cand;
    Eigen::VectorXd cand_score(n), cand_fw(n);
    double cand_ll = 0.0;
    bool accepted = false;
    for (int h = 0; h < 12; ++h) {
      cand = model.beta + scale * step;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (cand[j] > kLinPredClamp) {
          cand[j] = kLinPredClamp;
          model.separated = true;
        } else if (cand[j] < -kLinPredClamp) {
          cand[j] = -kLinPredClamp;
          model.separated = true;
        }
      }
      eval(cand, cand_score, cand_fw, cand_ll);
      if (cand_ll >= loglik - 1e-12) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;
    const double moved = (cand - model.beta).cwiseAbs().maxCoeff();
    model.beta = cand;
    score_eta = cand_score;
    fisher_w = cand_fw;
    loglik = cand_ll;
    if (moved < 1e-12) break;
  }
  return model;
}

// ---- risk-set frame --------------------------------------------------------------

TickFrame build_tick_frame(const std::vector<ObservedPath>& cohort, const ModelGrid& grid) {
  TickFrame frame;
  frame.grid = grid;
  frame.cohort = &cohort;
  const std::size_t K = grid.ticks.size();
  frame.row_of.assign(cohort.size() * K, -1);
  for (const auto& p : cohort) {
    frame.l0_dim = std::max(frame.l0_dim, (int)p.l0.size());
    for (const auto& e : p.events)
      if (e.l_value) frame.l_dim = std::max(frame.l_dim, (int)e.l_value->size());
  }

  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const ObservedPath& path = cohort[i];
    const std::size_t begin = frame.rows.size();

    // incremental replay instead of state_at per tick
    HistorySnapshot s;
    s.l0 = path.l0;
    s.a0 = path.a0;
    s.a_current = path.a0;
    s.l_current = default_l_current(path.l0);
    s.tau = path.tau;
    double last_trt = 0.0, last_cov = 0.0;
    std::size_t next_event = 0;

    for (std::size_t r = 0; r < K; ++r) {
      const Tick& tick = grid.ticks[r];
      if (tick.time > path.tau + 1e-12) break;
      // consume events strictly before this tick
      while (next_event < path.events.size() && path.events[next_event].time < tick.time) {
        const EventRecord& e = path.events[next_event];
        switch (e.kind) {
          case EventKind::trt_monitor:
            s.a_current = *e.a_value;
            ++s.n_a;
            last_trt = e.time;
            break;
          case EventKind::cov_monitor:
            s.l_current = *e.l_value;
            ++s.n_l;
            last_cov = e.time;
            break;
          case EventKind::censor: s.uncensored = false; break;
          case EventKind::death: s.alive = false; break;
        }
        ++next_event;
      }
      if (!s.alive || !s.uncensored) break;  // no longer at risk

      TickRow row;
      row.subject = static_cast<int>(i);
      row.tick = static_cast<int>(r);
      row.process = tick.process;
      s.t = tick.time;
      s.time_since_last_trt = tick.time - last_trt;
      s.time_since_last_cov = tick.time - last_cov;
      row.state = s;

      if (next_event < path.events.size() &&
          std::abs(path.events[next_event].time - tick.time) <= 1e-9) {
        const EventRecord& e = path.events[next_event];
        const std::size_t ev_tick = grid_tick_for_event(grid, e);
        if (ev_tick != r)
          throw IoError("event does not align with its grid slot");
        row.jump = true;
        if (e.kind == EventKind::trt_monitor) row.a_mark = *e.a_value;
        if (e.kind == EventKind::cov_monitor && !e.l_value->empty()) row.l_mark = (*e.l_value)[0];
      }
      frame.row_of[i * K + r] = static_cast<int>(frame.rows.size());
      frame.rows.push_back(std::move(row));
    }
    frame.subject_rows.emplace_back(begin, frame.rows.size());
  }
  return frame;
}

// ---- hazards ----------------------------------------------------------------------

double HazardModel::tick_prob(const HistorySnapshot& s) const {
  double pr;
  if (std::holds_alternative<BinaryRegressionModel>(predictor)) {
    pr = std::get<BinaryRegressionModel>(predictor).predict(s);
  } else {
    Eigen::VectorXd x(spec.dim());
    spec.emit(s, x.data());
    pr = clamp(prob_scale * std::get<hal::HALModel>(predictor).predict(x), 0.0, kHazardCeil);
  }
  if (pr >= kHazardCeil) ++clamp_activations;
  return pr;
}

std::string HazardModel::to_json() const {
  nlohmann::json j;
  j["process"] = to_string(process);
  if (std::holds_alternative<BinaryRegressionModel>(predictor))
    j["model"] = nlohmann::json::parse(std::get<BinaryRegressionModel>(predictor).to_json());
  else
    j["model"] = nlohmann::json::parse(hal::to_json(std::get<hal::HALModel>(predictor)));
  return j.dump();
}

namespace {

FeatureSpec bound_spec(const TickFrame& frame, const std::string& name) {
  FeatureSpec spec = FeatureSpec::named(name);
  spec.bind(frame.l0_dim, frame.l_dim, frame.grid.tau);
  return spec;
}

Eigen::MatrixXd design_matrix(const std::vector<const HistorySnapshot*>& rows,
                              const FeatureSpec& spec) {
  Eigen::MatrixXd X(rows.size(), spec.dim());
  std::vector<double> buf(spec.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    spec.emit(*rows[i], buf.data());
    for (std::size_t j = 0; j < buf.size(); ++j) X(i, j) = buf[j];
  }
  return X;
}

}  // namespace

HazardModel fit_hazard(const TickFrame& frame, Process process, const LearnerSpec& learner,
                       double prob_scale, int cv_folds) {
  std::vector<const HistorySnapshot*> rows;
  std::vector<double> yv;
  for (const auto& r : frame.rows) {
    if (r.process != process) continue;
    rows.push_back(&r.state);
    yv.push_back(r.jump ? 1.0 : 0.0);
  }
  if (rows.empty()) throw EmptyRiskSet("no at-risk ticks for process " +
                                       std::string(to_string(process)));

  const std::string spec_name =
      learner.kind == LearnerSpec::Kind::intercept_only ? "intercept_only" : learner.feature_spec;
  FeatureSpec spec = bound_spec(frame, spec_name);
  Eigen::MatrixXd X = design_matrix(rows, spec);
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), yv.size());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());

  HazardModel hz;
  hz.process = process;
  hz.spec = spec;
  hz.prob_scale = prob_scale;
  if (learner.kind == LearnerSpec::Kind::hal) {
    hal::HALModel m = hal::fit_hal_cv(X, y, hal::Family::binomial, cv_folds, false,
                                      learner.hal_options);
    hz.predictor = std::move(m);
    hz.prob_scale = 1.0;  // HAL absorbs the scale in its intercept
  } else {
    BinaryRegressionModel m = fit_binary(X, y, w, nullptr, prob_scale);
    m.spec = spec;
    hz.predictor = std::move(m);
  }
  return hz;
}

HazardModel fit_hazard(const TickFrame& frame, Process process,
                       const std::vector<LearnerSpec>& candidates, double prob_scale,
                       int cv_folds) {
  if (candidates.empty()) throw ConfigError("no candidate learners");
  if (candidates.size() == 1) return fit_hazard(frame, process, candidates[0], prob_scale, cv_folds);
  std::vector<HistorySnapshot> rows;
  std::vector<double> yv;
  for (const auto& r : frame.rows) {
    if (r.process != process) continue;
    rows.push_back(r.state);
    yv.push_back(r.jump ? 1.0 : 0.0);
  }
  if (rows.empty()) throw EmptyRiskSet("no at-risk ticks");
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), yv.size());
  const CvChoice choice =
      cv_select(candidates, cv_folds, rows, y, Eigen::VectorXd::Ones(y.size()), prob_scale);
  return fit_hazard(frame, process, candidates[choice.index], prob_scale, cv_folds);
}

BinaryRegressionModel fit_treatment_mechanism(const TickFrame& frame, const LearnerSpec& learner,
                                              int cv_folds) {
  std::vector<const HistorySnapshot*> rows;
  std::vector<double> yv;
  for (const auto& r : frame.rows) {
    if (r.process != Process::trt || !r.jump) continue;
    rows.push_back(&r.state);
    yv.push_back(r.a_mark);
  }
  if (rows.empty()) throw EmptyRiskSet("no treatment-monitoring rows");
  (void)cv_folds;
  const std::string spec_name =
      learner.kind == LearnerSpec::Kind::intercept_only ? "intercept_only" : learner.feature_spec;
  FeatureSpec spec = bound_spec(frame, spec_name);
  Eigen::MatrixXd X = design_matrix(rows, spec);
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), yv.size());
  BinaryRegressionModel m = fit_binary(X, y, Eigen::VectorXd::Ones(y.size()));
  m.spec = spec;
  return m;
}

BinaryRegressionModel fit_baseline_treatment(const std::vector<ObservedPath>& cohort,
                                             const FeatureSpec& spec) {
  if (cohort.empty()) throw EmptyRiskSet("empty cohort");
  Eigen::MatrixXd X(cohort.size(), spec.dim());
  Eigen::VectorXd y(cohort.size());
  std::vector<double> buf(spec.dim());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    HistorySnapshot s;
    s.l0 = cohort[i].l0;
    s.l_current = default_l_current(cohort[i].l0);
    s.tau = cohort[i].tau;
    spec.emit(s, buf.data());
    for (std::size_t j = 0; j < buf.size(); ++j) X(i, j) = buf[j];
    y[i] = cohort[i].a0;
  }
  BinaryRegressionModel m = fit_binary(X, y, Eigen::VectorXd::Ones(y.size()));
  m.spec = spec;
  return m;
}

double GFit::pi_rule(const HistorySnapshot& s, int rule_value) const {
  const double p1 = pi_hat.predict(s);
  return rule_value == 1 ? p1 : 1.0 - p1;
}

double GFit::pi0_rule(const HistorySnapshot& s, int rule_value) const {
  const double p1 = baseline_pi.predict(s);
  return rule_value == 1 ? p1 : 1.0 - p1;
}

GFit fit_g(const std::vector<ObservedPath>& cohort, const TickFrame& frame,
           const LearnerSpec& pi_learner, const LearnerSpec& censor_learner,
           double prob_scale) {
  GFit g;
  FeatureSpec pi0_spec = FeatureSpec::named("pi0_correct");
  pi0_spec.bind(frame.l0_dim, frame.l_dim);
  g.baseline_pi = fit_baseline_treatment(cohort, pi0_spec);
  g.pi_hat = fit_treatment_mechanism(frame, pi_learner);
  g.censor_hazard = fit_hazard(frame, Process::cens, censor_learner, prob_scale);
  return g;
}

// ---- cv_select -----------------------------------------------------------------

namespace {

double quasi_binomial_loss(double y, double p) {
  const double pc = clamp(p, 1e-12, 1.0 - 1e-12);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

}  // namespace

CvChoice cv_select(const std::vector<LearnerSpec>& candidates, int V,
                   const std::vector<HistorySnapshot>& rows, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& weights, double prob_scale, std::uint64_t fold_seed) {
  if (candidates.empty()) throw ConfigError("cv_select: empty candidate list");
  if (V < 2) throw FoldTooSmall("cv_select requires V >= 2");
  const std::size_t n = rows.size();
  if (n < static_cast<std::size_t>(V)) throw FoldTooSmall("fewer rows than folds");

  std::vector<int> fold(n);
  {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(fold_seed, 0xCF5EUL));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    for (std::size_t i = 0; i < n; ++i) fold[idx[i]] = static_cast<int>(i % V);
  }

  int l0_dim = 1, l_dim = 1;
  for (const auto& s : rows) {
    l0_dim = std::max(l0_dim, (int)s.l0.size());
    l_dim = std::max(l_dim, (int)s.l_current.size());
  }

  std::vector<double> risks(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const LearnerSpec& cand = candidates[c];
    const std::string spec_name =
        cand.kind == LearnerSpec::Kind::intercept_only ? "intercept_only" : cand.feature_spec;
    FeatureSpec spec = FeatureSpec::named(spec_name);
    spec.bind(l0_dim, l_dim);
    const std::size_t p = spec.dim();

    double total_loss = 0.0, total_w = 0.0;
    for (int v = 0; v < V; ++v) {
      std::vector<std::size_t> tr, va;
      for (std::size_t i = 0; i < n; ++i) (fold[i] == v ? va : tr).push_back(i);
      if (tr.empty() || va.empty()) throw FoldTooSmall("empty fold");
      Eigen::MatrixXd Xtr(tr.size(), p);
      Eigen::VectorXd ytr(tr.size()), wtr(tr.size());
      std::vector<double> buf(p);
      for (std::size_t i = 0; i < tr.size(); ++i) {
        spec.emit(rows[tr[i]], buf.data());
        for (std::size_t j = 0; j < p; ++j) Xtr(i, j) = buf[j];
        ytr[i] = y[tr[i]];
        wtr[i] = weights[tr[i]];
      }
      if (cand.kind == LearnerSpec::Kind::hal) {
        hal::HALModel m = hal::fit_hal_cv(Xtr, ytr, hal::Family::binomial, std::min(V, 5), false,
                                          cand.hal_options);
        for (std::size_t i = 0; i < va.size(); ++i) {
          spec.emit(rows[va[i]], buf.data());
          Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(buf.data(), p);
          total_loss += weights[va[i]] * quasi_binomial_loss(y[va[i]], m.predict(x));
          total_w += weights[va[i]];
        }
      } else {
        BinaryRegressionModel m = fit_binary(Xtr, ytr, wtr, nullptr, prob_scale);
        for (std::size_t i = 0; i < va.size(); ++i) {
          spec.emit(rows[va[i]], buf.data());
          Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(buf.data(), p);
          total_loss += weights[va[i]] * quasi_binomial_loss(y[va[i]], m.predict_row(x));
          total_w += weights[va[i]];
        }
      }
    }
    risks[c] = total_loss / std::max(total_w, 1e-300);
  }

  CvChoice out;
  out.risks = risks;
  out.index = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (risks[c] < risks[out.index]) out.index = static_cast<int>(c);
  return out;
}

}  // namespace cttmle
