#include "cttmle/gcomp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace cttmle {

// ---- iterated regressions -------------------------------------------------------

double GlmIteratedRegression::predict(const HistorySnapshot& s, int delta,
                                      double hweight) const {
  double buf[64];
  const std::size_t p = spec_.dim();
  if (p + 1 > 64) throw ConfigError("feature spec too wide");
  spec_.emit(s, buf);
  buf[p] = delta;
  double lp = 0.0;
  const double* b = model_.beta.data();
  for (std::size_t j = 0; j <= p; ++j) lp += b[j] * buf[j];
  const double base = clamp(expit(clamp(lp, -kLinPredClamp, kLinPredClamp)), 0.0, kHazardCeil);
  return tilt(base, hweight);
}

double HalIteratedRegression::predict(const HistorySnapshot& s, int delta,
                                      double hweight) const {
  Eigen::VectorXd x(spec_.dim() + 1);
  spec_.emit(s, x.data());
  x[spec_.dim()] = delta;
  return tilt(model_.predict(x), hweight);
}

bool state_compact_spec(const FeatureSpec& spec) {
  for (const auto& item : spec.items()) {
    if (item != "1" && item != "a0" && item != "a_current" && item != "l_current" &&
        item != "a0_x_l" && item != "l_x_not_a" && item != "t_over_tau" &&
        item != "t2_over_tau" && item != "a_x_t" && item != "l_x_t" && item != "l0" &&
        item != "period_t")
      return false;
  }
  return true;
}

std::vector<double> l0_support_of(const std::vector<ObservedPath>& cohort) {
  std::vector<double> vals;
  for (const auto& p : cohort) vals.push_back(p.l0.empty() ? 0.0 : p.l0[0]);
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  if (vals.empty()) vals.push_back(0.0);
  if (vals.size() > 64) throw TooLarge("baseline covariate support too large to tabulate");
  return vals;
}

PluginIterated::PluginIterated(const ModelGrid& grid, std::vector<double> l0_support,
                               const HazardModel& lam_cov, const HazardModel& lam_trt,
                               const HazardModel& lam_death, const BinaryRegressionModel& mu,
                               const Intervention& g_star)
    : grid_(grid), l0_(std::move(l0_support)), mu_(mu) {
  const std::size_t K = grid.ticks.size();
  const std::size_t B = l0_.size();
  table_.assign((K + 1) * B * 8, 0.0);
  HistorySnapshot s;
  s.l0 = {0.0};
  s.l_current = {0.0};
  s.tau = grid.tau;
  for (std::size_t r = K; r-- > 0;) {
    const Tick& tk = grid.ticks[r];
    s.t = tk.time;
    for (std::size_t b = 0; b < B; ++b) {
      s.l0[0] = l0_[b];
      for (int a0 = 0; a0 <= 1; ++a0)
        for (int a = 0; a <= 1; ++a)
          for (int l = 0; l <= 1; ++l) {
            s.a0 = a0;
            s.a_current = a;
            s.l_current[0] = l;
            double v = 0.0;
            switch (tk.process) {
              case Process::cov: {
                const double lam = lam_cov.tick_prob(s);
                const double p1 = mu_.predict(s);
                const double vj = p1 * table_[index(r + 1, b, a0, a, 1)] +
                                  (1.0 - p1) * table_[index(r + 1, b, a0, a, 0)];
                v = lam * vj + (1.0 - lam) * table_[index(r + 1, b, a0, a, l)];
                break;
              }
              case Process::trt: {
                const double lam = lam_trt.tick_prob(s);
                const int a_new = g_star.rule(s);
                v = lam * table_[index(r + 1, b, a0, a_new, l)] +
                    (1.0 - lam) * table_[index(r + 1, b, a0, a, l)];
                break;
              }
              case Process::cens:
                v = table_[index(r + 1, b, a0, a, l)];
                break;
              case Process::death: {
                const double lam = lam_death.tick_prob(s);
                v = lam + (1.0 - lam) * table_[index(r + 1, b, a0, a, l)];
                break;
              }
            }
            table_[index(r, b, a0, a, l)] = v;
          }
    }
  }
}

std::size_t PluginIterated::l0_index(double l0) const {
  for (std::size_t b = 0; b < l0_.size(); ++b)
    if (std::abs(l0_[b] - l0) <= 1e-9) return b;
  throw ConfigError("baseline covariate value outside the tabulated support");
}

double PluginIterated::value_entering(std::size_t tick, std::size_t l0_idx, int a0, int a,
                                      int l) const {
  const std::size_t K = grid_.ticks.size();
  return table_[index(std::min(tick, K), l0_idx, a0, a, l)];
}

double PluginIterated::predict(const HistorySnapshot& s, int delta, double hweight) const {
  const std::size_t r = grid_.first_tick_at_or_after(s.t - 1e-9);
  if (r >= grid_.ticks.size() || std::abs(grid_.ticks[r].time - s.t) > 1e-9 ||
      grid_.ticks[r].process != Process::cov)
    throw ConfigError("plug-in query off the covariate-tick anchor");
  const std::size_t b = l0_index(s.l0.empty() ? 0.0 : s.l0[0]);
  const int a0 = s.a0, a = s.a_current;
  const int l = (!s.l_current.empty() && s.l_current[0] >= 0.5) ? 1 : 0;
  double value;
  if (delta == 1) {
    const double p1 = mu_.predict(s);
    value = p1 * value_entering(r + 1, b, a0, a, 1) +
            (1.0 - p1) * value_entering(r + 1, b, a0, a, 0);
  } else {
    value = value_entering(r + 1, b, a0, a, l);
  }
  return tilt(value, hweight);
}

// ---- fitted hazards ----------------------------------------------------------------

FittedHazardField::FittedHazardField(HazardModel cov, HazardModel trt, HazardModel death,
                                     std::size_t n_subjects, std::size_t n_ticks)
    : cov_(std::move(cov)), trt_(std::move(trt)), death_(std::move(death)), n_ticks_(n_ticks) {
  for (auto& t : tilt_) t.assign(n_subjects * n_ticks, 0.0);
}

const HazardModel& FittedHazardField::model(Process p) const {
  switch (p) {
    case Process::cov: return cov_;
    case Process::trt: return trt_;
    case Process::death: return death_;
    default: throw ConfigError("no hazard model for this process");
  }
}

HazardModel& FittedHazardField::model(Process p) {
  return const_cast<HazardModel&>(static_cast<const FittedHazardField*>(this)->model(p));
}

double FittedHazardField::prob(Process process, const HistorySnapshot& s, int subject,
                               int tick) const {
  const double base = model(process).tick_prob(s);
  const int which = process == Process::cov ? 0 : (process == Process::trt ? 1 : 2);
  const double off = tilt_[which][static_cast<std::size_t>(subject) * n_ticks_ + tick];
  if (off == 0.0) return base;
  const double p = clamp(base, 1e-12, 1.0 - 1e-12);
  return clamp(expit(logit(p) + off), 0.0, kHazardCeil);
}

void FittedHazardField::add_tilt(Process process, int subject, int tick, double delta) {
  const int which = process == Process::cov ? 0 : (process == Process::trt ? 1 : 2);
  tilt_[which][static_cast<std::size_t>(subject) * n_ticks_ + tick] += delta;
}

// ---- state updates ------------------------------------------------------------------

HistorySnapshot advance_state(HistorySnapshot s, double new_t) {
  const double last_trt = s.t - s.time_since_last_trt;
  const double last_cov = s.t - s.time_since_last_cov;
  s.t = new_t;
  s.time_since_last_trt = new_t - last_trt;
  s.time_since_last_cov = new_t - last_cov;
  return s;
}

HistorySnapshot apply_trt_jump(HistorySnapshot s, int a_new) {
  s.a_current = a_new;
  ++s.n_a;
  s.time_since_last_trt = 0.0;
  return s;
}

HistorySnapshot apply_cov_jump(HistorySnapshot s, double l_new) {
  if (s.l_current.empty()) s.l_current.assign(1, 0.0);
  s.l_current[0] = l_new;
  ++s.n_l;
  s.time_since_last_cov = 0.0;
  return s;
}

// ---- bridge ---------------------------------------------------------------------------

double model_value_entering(const TickFrame& frame, const HazardField& hazards,
                            const IteratedRegression& zmodel, const Intervention& g_star,
                            const std::vector<double>* hweight, std::size_t tick,
                            HistorySnapshot s, int subject) {
  const std::size_t K = frame.grid.ticks.size();
  if (tick >= K) return 0.0;  // alive at the horizon
  const Tick& tk = frame.grid.ticks[tick];
  s = advance_state(std::move(s), tk.time);
  const double hw =
      hweight ? (*hweight)[static_cast<std::size_t>(subject) * K + tick] : 0.0;
  switch (tk.process) {
    case Process::cov: {
      const double lam = hazards.prob(Process::cov, s, subject, static_cast<int>(tick));
      const double z1 = zmodel.predict(s, 1, hw);
      const double z0 = zmodel.predict(s, 0, hw);
      return lam * z1 + (1.0 - lam) * z0;
    }
    case Process::trt: {
      const double lam = hazards.prob(Process::trt, s, subject, static_cast<int>(tick));
      const HistorySnapshot sj = apply_trt_jump(s, g_star.rule(s));
      const double v1 = model_value_entering(frame, hazards, zmodel, g_star, hweight,
                                             tick + 1, sj, subject);
      const double v0 = model_value_entering(frame, hazards, zmodel, g_star, hweight,
                                             tick + 1, s, subject);
      return lam * v1 + (1.0 - lam) * v0;
    }
    case Process::cens:
      return model_value_entering(frame, hazards, zmodel, g_star, hweight, tick + 1, s,
                                  subject);
    case Process::death: {
      const double lam = hazards.prob(Process::death, s, subject, static_cast<int>(tick));
      const double v0 = model_value_entering(frame, hazards, zmodel, g_star, hweight,
                                             tick + 1, s, subject);
      return lam * 1.0 + (1.0 - lam) * v0;
    }
  }
  return 0.0;
}

// ---- backward sweep ---------------------------------------------------------------------

ZSweepState backward_sweep(const TickFrame& frame, const HazardField& hazards,
                           const IteratedRegression& zmodel, const Intervention& g_star,
                           const std::vector<double>* hweight) {
  const std::size_t n_rows = frame.rows.size();
  const std::size_t n_sub = frame.n_subjects();
  const std::size_t K = frame.grid.ticks.size();
  ZSweepState st;
  st.z.assign(n_rows, 0.0);
  st.z_model.assign(n_rows, 0.0);
  st.pre.assign(n_rows, 0.0);
  st.branch0.assign(n_rows, 0.0);
  st.branch1.assign(n_rows, 0.0);
  st.hazard.assign(n_rows, 0.0);
  st.z_t0.assign(n_sub, 0.0);

  auto bridge = [&](std::size_t tick, HistorySnapshot s, int subject) {
    return model_value_entering(frame, hazards, zmodel, g_star, hweight, tick, std::move(s),
                                subject);
  };
  auto squeeze = [](double v) { return clamp(v, 0.0, 1.0); };

  for (std::size_t i = 0; i < n_sub; ++i) {
    const auto [begin, end] = frame.subject_rows[i];
    double v = 0.0;  // survived to tau: Y = 0; terminal rows never read it
    for (std::size_t r = end; r-- > begin;) {
      const TickRow& row = frame.rows[r];
      const HistorySnapshot& s = row.state;
      const double hw = hweight ? (*hweight)[i * K + row.tick] : 0.0;
      double lam = 0.0, b0 = 0.0, b1 = 0.0, z = 0.0, zm = 0.0, pre = 0.0;
      switch (row.process) {
        case Process::cov: {
          lam = hazards.prob(Process::cov, s, row.subject, row.tick);
          b1 = zmodel.predict(s, 1, hw);
          b0 = zmodel.predict(s, 0, hw);
          // data-anchored recursion keeps the propagated value on the
          // observed no-jump branch
          z = v;
          zm = row.jump ? bridge(row.tick + 1, apply_cov_jump(s, row.l_mark), row.subject)
                        : b0;
          pre = lam * b1 + (1.0 - lam) * b0;
          v = lam * b1 + (1.0 - lam) * (row.jump ? b0 : v);
          break;
        }
        case Process::trt: {
          lam = hazards.prob(Process::trt, s, row.subject, row.tick);
          const int rule_a = g_star.rule(s);
          const bool consistent = row.jump && row.a_mark == rule_a;
          b1 = bridge(row.tick + 1, apply_trt_jump(s, rule_a), row.subject);
          b0 = bridge(row.tick + 1, s, row.subject);
          const double v1 = consistent ? v : b1;
          const double v0 = row.jump ? b0 : v;
          z = row.jump ? v1 : v;
          zm = row.jump ? b1 : b0;
          pre = lam * b1 + (1.0 - lam) * b0;
          v = lam * v1 + (1.0 - lam) * v0;
          break;
        }
        case Process::cens: {
          b0 = bridge(row.tick + 1, s, row.subject);
          b1 = b0;  // the intervention prevents censoring
          zm = b0;
          z = row.jump ? b0 : v;
          pre = b0;
          v = z;
          break;
        }
        case Process::death: {
          lam = hazards.prob(Process::death, s, row.subject, row.tick);
          b0 = bridge(row.tick + 1, s, row.subject);
          b1 = 1.0;
          z = row.jump ? 1.0 : v;
          zm = row.jump ? 1.0 : b0;
          pre = lam + (1.0 - lam) * b0;
          v = lam + (1.0 - lam) * (row.jump ? b0 : v);
          break;
        }
      }
      st.hazard[r] = lam;
      st.branch0[r] = squeeze(b0);
      st.branch1[r] = squeeze(b1);
      st.z[r] = squeeze(z);
      st.z_model[r] = squeeze(zm);
      st.pre[r] = squeeze(pre);
    }

    // plug-in value at the intervened baseline
    const ObservedPath& path = (*frame.cohort)[i];
    HistorySnapshot base;
    base.l0 = path.l0;
    base.a0 = path.a0;
    base.a_current = path.a0;
    base.l_current = default_l_current(path.l0);
    base.t = 0.0;
    base.tau = path.tau;
    const int rule_a0 = g_star.rule(base);
    base.a0 = rule_a0;
    base.a_current = rule_a0;
    st.z_t0[i] =
        begin == end ? 0.0 : squeeze(bridge(frame.rows[begin].tick, base, static_cast<int>(i)));
  }

  double sum = 0.0;
  for (double z0 : st.z_t0) sum += z0;
  st.psi_hat = st.z_t0.empty() ? 0.0 : sum / static_cast<double>(st.z_t0.size());
  return st;
}

void write_sweep_csv(const TickFrame& frame, const ZSweepState& st, std::ostream& os) {
  os << "subject,tick,time,process,z,z_L,z_Nl,z_Na,z_Nd\n";
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    const TickRow& row = frame.rows[r];
    double z = st.z[r], z_L = z, z_Nl = z, z_Na = z, z_Nd = st.pre[r];
    switch (row.process) {
      case Process::cov:
        z_L = row.jump ? st.branch1[r] : st.branch0[r];
        z_Nl = st.pre[r];
        z_Na = st.pre[r];
        break;
      case Process::trt:
        z_L = z;
        z_Nl = z;
        z_Na = st.pre[r];
        break;
      case Process::cens:
        break;
      case Process::death:
        z_L = z;
        z_Nl = z;
        z_Na = row.jump ? 1.0 : st.branch0[r];
        break;
    }
    os << row.subject << ',' << row.tick << ',' << frame.grid.ticks[row.tick].time << ','
       << to_string(row.process) << ',' << z << ',' << z_L << ',' << z_Nl << ',' << z_Na << ','
       << z_Nd << "\n";
  }
}

// ---- iterated-expectation regression ---------------------------------------------------

std::unique_ptr<IteratedRegression> fit_zL_regression(const TickFrame& frame,
                                                      const std::vector<double>& z_values,
                                                      const FeatureSpec& spec,
                                                      const LearnerSpec& learner) {
  std::vector<std::size_t> rows;
  std::size_t jump_rows = 0;
  for (std::size_t r = 0; r < frame.rows.size(); ++r) {
    if (frame.rows[r].process != Process::cov) continue;
    rows.push_back(r);
    if (frame.rows[r].jump) ++jump_rows;
  }
  if (rows.empty() || jump_rows == 0)
    throw EmptyRiskSet("no covariate-monitoring rows to fit the iterated regression");

  const std::size_t p = spec.dim();
  Eigen::MatrixXd X(rows.size(), p + 1);
  Eigen::VectorXd y(rows.size());
  std::vector<double> buf(p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TickRow& row = frame.rows[rows[i]];
    spec.emit(row.state, buf.data());
    for (std::size_t j = 0; j < p; ++j) X(i, j) = buf[j];
    X(i, p) = row.jump ? 1.0 : 0.0;
    y[i] = clamp(z_values[rows[i]], 0.0, 1.0);
  }

  if (learner.kind == LearnerSpec::Kind::hal) {
    hal::HALModel m = hal::fit_hal_cv(X, y, hal::Family::binomial, 5, false, learner.hal_options);
    return std::make_unique<HalIteratedRegression>(spec, std::move(m));
  }
  Eigen::MatrixXd Xfit = X;
  if (learner.kind == LearnerSpec::Kind::intercept_only) {
    // keep the jump indicator; drop the rest
    Xfit.resize(rows.size(), 2);
    Xfit.col(0) = Eigen::VectorXd::Ones(rows.size());
    Xfit.col(1) = X.col(p);
  }
  BinaryRegressionModel m =
      fit_binary(Xfit, y, Eigen::VectorXd::Ones(y.size()));
  if (learner.kind == LearnerSpec::Kind::intercept_only) {
    // re-embed into the full design so predict() stays uniform
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
    beta[0] = m.beta[0];
    beta[p] = m.beta[1];
    m.beta = beta;
  }
  return std::make_unique<GlmIteratedRegression>(spec, std::move(m));
}

std::unique_ptr<IteratedRegression> fit_initial_z(const TickFrame& frame,
                                                  const HazardField& hazards,
                                                  const Intervention& g_star,
                                                  const FeatureSpec& spec,
                                                  const LearnerSpec& learner,
                                                  const InitialZOptions& opt) {
  // pass 0: outcomes are the raw endpoints of subjects followed to the end
  std::vector<double> z0(frame.rows.size(), 0.0);
  {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < frame.n_subjects(); ++i) {
      const ObservedPath& p = (*frame.cohort)[i];
      if (p.censored()) continue;
      const double y = p.outcome();
      const auto [b, e] = frame.subject_rows[i];
      for (std::size_t r = b; r < e; ++r) z0[r] = y;
      keep.push_back(i);
    }
    if (keep.empty()) throw EmptyRiskSet("all subjects censored");
    // restrict the first fit to those rows by zero-weighting the rest
    std::vector<std::size_t> rows;
    std::size_t jumps = 0;
    for (std::size_t r = 0; r < frame.rows.size(); ++r)
      if (frame.rows[r].process == Process::cov) {
        rows.push_back(r);
        if (frame.rows[r].jump) ++jumps;
      }
    if (rows.empty() || jumps == 0) throw EmptyRiskSet("no covariate-monitoring rows");
    const std::size_t p = spec.dim();
    Eigen::MatrixXd X(rows.size(), p + 1);
    Eigen::VectorXd y(rows.size()), w(rows.size());
    std::vector<double> buf(p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const TickRow& row = frame.rows[rows[i]];
      spec.emit(row.state, buf.data());
      for (std::size_t j = 0; j < p; ++j) X(i, j) = buf[j];
      X(i, p) = row.jump ? 1.0 : 0.0;
      y[i] = z0[rows[i]];
      w[i] = (*frame.cohort)[row.subject].censored() ? 0.0 : 1.0;
    }
    BinaryRegressionModel m = fit_binary(X, y, w);
    std::unique_ptr<IteratedRegression> model =
        std::make_unique<GlmIteratedRegression>(spec, std::move(m));

    // self-consistency passes
    double psi_prev = -1.0;
    for (int pass = 0; pass < opt.max_passes; ++pass) {
      const ZSweepState st = backward_sweep(frame, hazards, *model, g_star, nullptr);
      if (std::abs(st.psi_hat - psi_prev) < opt.tol) break;
      psi_prev = st.psi_hat;
      model = fit_zL_regression(frame, st.z, spec, learner);
    }
    return model;
  }
}

// ---- tiny models -------------------------------------------------------------------------

int TinyModel::decision_points() const {
  int d = 1;  // baseline assignment
  for (const auto& t : ticks) {
    d += 1;
    if (t.process == Process::cov) d += 1;
    if (t.process == Process::trt) d += 1;
  }
  return d;
}

void TinyModel::check_enumerable() const {
  if (decision_points() > 12)
    throw TooLarge("tiny model has " + std::to_string(decision_points()) +
                   " decision points (max 12)");
}

HistorySnapshot TinyModel::baseline_state() const {
  HistorySnapshot s;
  s.l0 = {l0};
  s.l_current = {l_init};
  s.t = 0.0;
  s.tau = tau;
  return s;
}

std::vector<ObservedPath> TinyModel::simulate(long n, std::uint64_t seed) const {
  std::vector<ObservedPath> cohort;
  cohort.reserve(n);
  for (long i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    ObservedPath path;
    path.subject_id = i;
    path.tau = tau;
    path.l0 = {l0};
    HistorySnapshot s = baseline_state();
    path.a0 = rng.bernoulli(pi0.prob(s)) ? 1 : 0;
    s.a0 = path.a0;
    s.a_current = path.a0;
    for (const auto& tk : ticks) {
      s = advance_state(std::move(s), tk.time);
      switch (tk.process) {
        case Process::cov:
          if (rng.bernoulli(lam_cov.prob(s))) {
            const double l_new = rng.bernoulli(mu.prob(s)) ? 1.0 : 0.0;
            path.events.push_back({tk.time, EventKind::cov_monitor, std::nullopt,
                                   std::vector<double>{l_new}});
            s = apply_cov_jump(std::move(s), l_new);
          }
          break;
        case Process::trt:
          if (rng.bernoulli(lam_trt.prob(s))) {
            const int a_new = rng.bernoulli(pi.prob(s)) ? 1 : 0;
            path.events.push_back({tk.time, EventKind::trt_monitor, a_new, std::nullopt});
            s = apply_trt_jump(std::move(s), a_new);
          }
          break;
        case Process::cens:
          if (rng.bernoulli(lam_cens.prob(s))) {
            path.events.push_back({tk.time, EventKind::censor, std::nullopt, std::nullopt});
          }
          break;
        case Process::death:
          if (rng.bernoulli(lam_death.prob(s))) {
            path.events.push_back({tk.time, EventKind::death, std::nullopt, std::nullopt});
          }
          break;
      }
      if (!path.events.empty() && (path.events.back().kind == EventKind::censor ||
                                   path.events.back().kind == EventKind::death))
        break;
    }
    validate_path(path);
    cohort.push_back(std::move(path));
  }
  return cohort;
}

double exact_value(const TinyModel& model, const Intervention& g_star, std::size_t tick,
                   const HistorySnapshot& state) {
  if (!state.alive) return 1.0;
  if (tick >= model.ticks.size()) return 0.0;
  const Tick& tk = model.ticks[tick];
  HistorySnapshot s = advance_state(state, tk.time);
  switch (tk.process) {
    case Process::cov: {
      const double lam = model.lam_cov.prob(s);
      const double p1 = model.mu.prob(s);
      const double vj = p1 * exact_value(model, g_star, tick + 1, apply_cov_jump(s, 1.0)) +
                        (1.0 - p1) * exact_value(model, g_star, tick + 1, apply_cov_jump(s, 0.0));
      return lam * vj + (1.0 - lam) * exact_value(model, g_star, tick + 1, s);
    }
    case Process::trt: {
      const double lam = model.lam_trt.prob(s);
      const double vj =
          exact_value(model, g_star, tick + 1, apply_trt_jump(s, g_star.rule(s)));
      return lam * vj + (1.0 - lam) * exact_value(model, g_star, tick + 1, s);
    }
    case Process::cens:
      return exact_value(model, g_star, tick + 1, s);  // prevented
    case Process::death: {
      const double lam = model.lam_death.prob(s);
      return lam + (1.0 - lam) * exact_value(model, g_star, tick + 1, s);
    }
  }
  return 0.0;
}

double enumerate_gcomp(const TinyModel& model, const Intervention& g_star) {
  model.check_enumerable();
  HistorySnapshot base = model.baseline_state();
  const int a0 = g_star.rule(base);
  base.a0 = a0;
  base.a_current = a0;
  return exact_value(model, g_star, 0, base);
}

// ---- exact canonical-gradient mean and second-order remainder ------------------------------

namespace {

struct TinyZ {
  const TinyModel& P;
  const Intervention& g;

  double value_after(std::size_t tick, const HistorySnapshot& s) const {
    return exact_value(P, g, tick + 1, s);
  }
  // E[Y | cov jump at tick, history], L integrated out
  double z_L1(std::size_t tick, const HistorySnapshot& s) const {
    const double p1 = P.mu.prob(s);
    return p1 * value_after(tick, apply_cov_jump(s, 1.0)) +
           (1.0 - p1) * value_after(tick, apply_cov_jump(s, 0.0));
  }
};

// recursive expectation of D*(P) under the observed law of P0
double dstar_dfs(const TinyModel& P, const TinyModel& P0, const Intervention& g,
                 const TinyZ& zp, double z0_minus_psi, std::size_t tick, HistorySnapshot s,
                 double prob0, double h, double dsum) {
  if (prob0 == 0.0) return 0.0;
  if (!s.alive || !s.uncensored || tick >= P.ticks.size())
    return prob0 * (z0_minus_psi + dsum);
  const Tick& tk = P.ticks[tick];
  s = advance_state(std::move(s), tk.time);
  double out = 0.0;
  switch (tk.process) {
    case Process::cov: {
      const double lam0 = P0.lam_cov.prob(s);
      const double lamP = P.lam_cov.prob(s);
      const double zl1 = zp.z_L1(tick, s);
      const double hl = zl1 - zp.value_after(tick, s);
      out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, s, prob0 * (1.0 - lam0), h,
                       dsum + h * hl * (0.0 - lamP));
      const double p1_0 = P0.mu.prob(s);
      for (int l = 0; l <= 1; ++l) {
        const double pl0 = l ? p1_0 : 1.0 - p1_0;
        HistorySnapshot sj = apply_cov_jump(s, l);
        const double zt = zp.value_after(tick, sj);
        const double term = h * (zt - zl1) + h * hl * (1.0 - lamP);
        out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, std::move(sj),
                         prob0 * lam0 * pl0, h, dsum + term);
      }
      break;
    }
    case Process::trt: {
      const double lam0 = P0.lam_trt.prob(s);
      const double lamP = P.lam_trt.prob(s);
      const int rule_a = g.rule(s);
      const double ha = zp.value_after(tick, apply_trt_jump(s, rule_a)) -
                        zp.value_after(tick, s);
      out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, s, prob0 * (1.0 - lam0), h,
                       dsum + h * ha * (0.0 - lamP));
      const double piP1 = P.pi.prob(s);
      const double pi0_1 = P0.pi.prob(s);
      for (int a = 0; a <= 1; ++a) {
        const double pa0 = a ? pi0_1 : 1.0 - pi0_1;
        const double piP = a ? piP1 : 1.0 - piP1;
        const double hnew = (a == rule_a) ? h / piP : 0.0;
        out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, apply_trt_jump(s, a),
                         prob0 * lam0 * pa0, hnew, dsum + h * ha * (1.0 - lamP));
      }
      break;
    }
    case Process::cens: {
      const double lam0 = P0.lam_cens.prob(s);
      const double lamP = P.lam_cens.prob(s);
      out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, s, prob0 * (1.0 - lam0),
                       h / (1.0 - lamP), dsum);
      // censored: the gradient terms freeze, later factors never accrue
      out += prob0 * lam0 * (z0_minus_psi + dsum);
      break;
    }
    case Process::death: {
      const double lam0 = P0.lam_death.prob(s);
      const double lamP = P.lam_death.prob(s);
      const double hd = 1.0 - zp.value_after(tick, s);
      out += dstar_dfs(P, P0, g, zp, z0_minus_psi, tick + 1, s, prob0 * (1.0 - lam0), h,
                       dsum + h * hd * (0.0 - lamP));
      out += prob0 * lam0 * (z0_minus_psi + dsum + h * hd * (1.0 - lamP));
      break;
    }
  }
  return out;
}

// one term of the product-difference expansion of the remainder: Q0 factors
// before `target_tick`, (Q0 - Q) at it, Q after, together with the g-ratio
// prefix (g0bar - gbar)/gbar at the target tick, on intervention-consistent
// paths, weighted by the endpoint indicator
double r2_term_dfs(const TinyModel& P, const TinyModel& P0, const Intervention& g,
                   std::size_t target_tick, std::size_t tick, HistorySnapshot s, double factor,
                   double g_prod, double g0_prod) {
  if (factor == 0.0) return 0.0;
  if (!s.alive) return tick > target_tick ? factor : 0.0;  // died: Y = 1
  if (tick >= P.ticks.size()) return 0.0;                  // survived: Y = 0
  if (!s.alive && tick <= target_tick) return 0.0;
  const Tick& tk = P.ticks[tick];
  s = advance_state(std::move(s), tk.time);

  // Q-side per-branch factors under P and P0
  auto descend = [&](HistorySnapshot next, double q, double q0, double g_fac,
                     double g0_fac) {
    double f = factor;
    if (tick < target_tick)
      f *= q0;
    else if (tick == target_tick)
      f *= (q0 - q);
    else
      f *= q;
    if (tick == target_tick) {
      // multiply in the g-ratio accumulated strictly before this tick
      f *= (g0_prod - g_prod) / g_prod;
    }
    return r2_term_dfs(P, P0, g, target_tick, tick + 1, std::move(next), f,
                       g_prod * g_fac, g0_prod * g0_fac);
  };

  double out = 0.0;
  switch (tk.process) {
    case Process::cov: {
      const double lam = P.lam_cov.prob(s), lam0 = P0.lam_cov.prob(s);
      out += descend(s, 1.0 - lam, 1.0 - lam0, 1.0, 1.0);
      const double m1 = P.mu.prob(s), m10 = P0.mu.prob(s);
      for (int l = 0; l <= 1; ++l) {
        const double q = lam * (l ? m1 : 1.0 - m1);
        const double q0 = lam0 * (l ? m10 : 1.0 - m10);
        out += descend(apply_cov_jump(s, l), q, q0, 1.0, 1.0);
      }
      break;
    }
    case Process::trt: {
      const double lam = P.lam_trt.prob(s), lam0 = P0.lam_trt.prob(s);
      out += descend(s, 1.0 - lam, 1.0 - lam0, 1.0, 1.0);
      const int rule_a = g.rule(s);
      const double piP = rule_a ? P.pi.prob(s) : 1.0 - P.pi.prob(s);
      const double pi0 = rule_a ? P0.pi.prob(s) : 1.0 - P0.pi.prob(s);
      out += descend(apply_trt_jump(s, rule_a), lam, lam0, piP, pi0);
      break;
    }
    case Process::cens: {
      // censoring is interventional: no Q factor, g factors for the forced
      // no-jump branch
      const double lam = P.lam_cens.prob(s), lam0 = P0.lam_cens.prob(s);
      out += r2_term_dfs(P, P0, g, target_tick, tick + 1, s, factor,
                         g_prod * (1.0 - lam), g0_prod * (1.0 - lam0));
      break;
    }
    case Process::death: {
      const double lam = P.lam_death.prob(s), lam0 = P0.lam_death.prob(s);
      out += descend(s, 1.0 - lam, 1.0 - lam0, 1.0, 1.0);
      HistorySnapshot dead = s;
      dead.alive = false;
      out += descend(std::move(dead), lam, lam0, 1.0, 1.0);
      break;
    }
  }
  return out;
}

}  // namespace

EicEnumeration enumerate_eic_mean(const TinyModel& model, const TinyModel& truth,
                                  const Intervention& g_star) {
  model.check_enumerable();
  truth.check_enumerable();
  if (model.ticks.size() != truth.ticks.size())
    throw ConfigError("models must share the tick layout");

  if (model.l0 != truth.l0 || model.l_init != truth.l_init)
    throw ConfigError("models must share the baseline support");

  EicEnumeration out;
  out.psi_P = enumerate_gcomp(model, g_star);
  out.psi_P0 = enumerate_gcomp(truth, g_star);

  // Z_{t=0} under the model equals psi at the (single) baseline support point
  const double z0_minus_psi = 0.0;

  TinyZ zp{model, g_star};
  HistorySnapshot base = model.baseline_state();
  const int rule_a0 = g_star.rule(base);
  double total = 0.0;
  const double pi0_truth = truth.pi0.prob(base);
  const double pi0_model = model.pi0.prob(base);
  for (int a0 = 0; a0 <= 1; ++a0) {
    HistorySnapshot s = base;
    s.a0 = a0;
    s.a_current = a0;
    const double prob0 = a0 ? pi0_truth : 1.0 - pi0_truth;
    const double h0 = (a0 == rule_a0) ? 1.0 / (a0 ? pi0_model : 1.0 - pi0_model) : 0.0;
    total += dstar_dfs(model, truth, g_star, zp, z0_minus_psi, 0, std::move(s), prob0, h0, 0.0);
  }
  out.P0_D_star = total;

  double r2 = 0.0;
  {
    HistorySnapshot s = base;
    s.a0 = rule_a0;
    s.a_current = rule_a0;
    const double g_base = rule_a0 ? pi0_model : 1.0 - pi0_model;
    const double g0_base = rule_a0 ? pi0_truth : 1.0 - pi0_truth;
    for (std::size_t t = 0; t < model.ticks.size(); ++t) {
      if (model.ticks[t].process == Process::cens) continue;  // no Q factor there
      r2 += r2_term_dfs(model, truth, g_star, t, 0, s, 1.0, g_base, g0_base);
    }
  }
  out.remainder_R2 = r2;
  return out;
}

double ExactTinyValue::predict(const HistorySnapshot& s, int delta, double hweight) const {
  // locate the tick by time
  std::size_t tick = model_.ticks.size();
  for (std::size_t r = 0; r < model_.ticks.size(); ++r)
    if (std::abs(model_.ticks[r].time - s.t) <= 1e-9 && model_.ticks[r].process == Process::cov) {
      tick = r;
      break;
    }
  if (tick == model_.ticks.size()) throw ConfigError("no cov tick at the queried time");
  double value;
  if (delta == 1) {
    const double p1 = model_.mu.prob(s);
    value = p1 * exact_value(model_, g_star_, tick + 1, apply_cov_jump(s, 1.0)) +
            (1.0 - p1) * exact_value(model_, g_star_, tick + 1, apply_cov_jump(s, 0.0));
  } else {
    value = exact_value(model_, g_star_, tick + 1, s);
  }
  return tilt(value, hweight);
}

double ExactTinyHazards::prob(Process process, const HistorySnapshot& s, int, int) const {
  switch (process) {
    case Process::cov: return model_.lam_cov.prob(s);
    case Process::trt: return model_.lam_trt.prob(s);
    case Process::cens: return model_.lam_cens.prob(s);
    case Process::death: return model_.lam_death.prob(s);
  }
  return 0.0;
}

// ---- tiny-model serialization and randomization ---------------------------------------------

namespace {

nlohmann::json logit_to_json(const TinyLogit& f) {
  return {{"intercept", f.intercept}, {"a0", f.c_a0}, {"a", f.c_a}, {"l", f.c_l}, {"t", f.c_t}};
}

TinyLogit logit_from_json(const nlohmann::json& j) {
  TinyLogit f;
  f.intercept = j.value("intercept", 0.0);
  f.c_a0 = j.value("a0", 0.0);
  f.c_a = j.value("a", 0.0);
  f.c_l = j.value("l", 0.0);
  f.c_t = j.value("t", 0.0);
  return f;
}

Process process_from_string(const std::string& s) {
  if (s == "cov") return Process::cov;
  if (s == "trt") return Process::trt;
  if (s == "cens") return Process::cens;
  if (s == "death") return Process::death;
  throw ConfigError("unknown process: " + s);
}

}  // namespace

std::string TinyModel::to_json() const {
  nlohmann::json j;
  j["l0"] = l0;
  j["l_init"] = l_init;
  j["tau"] = tau;
  nlohmann::json ticks_json = nlohmann::json::array();
  for (const auto& t : ticks) ticks_json.push_back({{"time", t.time}, {"process", to_string(t.process)}});
  j["ticks"] = ticks_json;
  j["pi0"] = logit_to_json(pi0);
  j["mu"] = logit_to_json(mu);
  j["pi"] = logit_to_json(pi);
  j["lam_cov"] = logit_to_json(lam_cov);
  j["lam_trt"] = logit_to_json(lam_trt);
  j["lam_cens"] = logit_to_json(lam_cens);
  j["lam_death"] = logit_to_json(lam_death);
  return j.dump(2);
}

TinyModel TinyModel::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  TinyModel m;
  m.l0 = j.value("l0", 1.0);
  m.l_init = j.value("l_init", 0.0);
  m.tau = j.value("tau", 2.0);
  for (const auto& t : j.at("ticks"))
    m.ticks.push_back({t.at("time").get<double>(), process_from_string(t.at("process"))});
  m.pi0 = logit_from_json(j.at("pi0"));
  m.mu = logit_from_json(j.at("mu"));
  m.pi = logit_from_json(j.at("pi"));
  m.lam_cov = logit_from_json(j.at("lam_cov"));
  m.lam_trt = logit_from_json(j.at("lam_trt"));
  m.lam_cens = logit_from_json(j.at("lam_cens"));
  m.lam_death = logit_from_json(j.at("lam_death"));
  m.check_enumerable();
  return m;
}

TinyModel TinyModel::from_json_file(const std::string& filename) {
  std::ifstream is(filename);
  if (!is) throw IoError("cannot open " + filename);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

TinyModel TinyModel::random(std::uint64_t seed, bool with_censoring) {
  Rng rng(derive_seed(seed, 0x717E));
  TinyModel m;
  // baseline covariate convention shared with the estimation side:
  // l_current starts at 1{l0 >= 4}
  m.l0 = rng.bernoulli(0.5) ? 5.0 : 1.0;
  m.l_init = m.l0 >= 4.0 ? 1.0 : 0.0;
  m.tau = 2.0;
  if (with_censoring)
    m.ticks = {{0.2, Process::cov},  {0.4, Process::trt}, {0.6, Process::cens},
               {0.8, Process::death}, {1.2, Process::cov}, {1.4, Process::trt},
               {1.8, Process::death}};
  else
    m.ticks = {{0.2, Process::cov},  {0.4, Process::trt}, {0.8, Process::death},
               {1.2, Process::cov},  {1.4, Process::trt}, {1.8, Process::death}};
  auto rnd = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  auto rnd_logit = [&](double base) {
    TinyLogit f;
    f.intercept = base + rnd(-0.8, 0.8);
    f.c_a0 = rnd(-1.0, 1.0);
    f.c_a = rnd(-1.0, 1.0);
    f.c_l = rnd(-1.0, 1.0);
    f.c_t = rnd(-0.4, 0.4);
    return f;
  };
  m.pi0 = rnd_logit(0.0);
  m.mu = rnd_logit(0.0);
  m.pi = rnd_logit(0.0);
  m.lam_cov = rnd_logit(-0.3);
  m.lam_trt = rnd_logit(-0.3);
  m.lam_cens = rnd_logit(-1.5);
  m.lam_death = rnd_logit(-1.0);
  m.check_enumerable();
  return m;
}

}  // namespace cttmle
