#include "cttmle/hal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace cttmle::hal {

namespace {

void sections_up_to(int p, int max_order, std::vector<std::vector<int>>& out) {
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (!cur.empty()) out.push_back(cur);
    if ((int)cur.size() == max_order) return;
    for (int j = start; j < p; ++j) {
      cur.push_back(j);
      rec(j + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

}  // namespace

BasisSet enumerate_basis(const Eigen::MatrixXd& rows, int max_order, int max_knots,
                         std::uint64_t seed) {
  if (max_order < 1) throw ConfigError("max_order must be >= 1");
  const int n = static_cast<int>(rows.rows());
  const int p = static_cast<int>(rows.cols());
  std::vector<std::vector<int>> sections;
  sections_up_to(p, std::min(max_order, p), sections);

  BasisSet out;
  std::vector<Eigen::VectorXd> cols;
  std::map<std::vector<std::uint8_t>, bool> seen;  // dedup on evaluated column
  for (const auto& sec : sections) {
    // distinct observed section values
    std::vector<std::vector<double>> knots;
    {
      std::vector<std::vector<double>> vals(n);
      for (int i = 0; i < n; ++i) {
        vals[i].reserve(sec.size());
        for (int j : sec) vals[i].push_back(rows(i, j));
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      knots = std::move(vals);
    }
    if ((int)knots.size() > max_knots) {
      // deterministic uniform subsample without replacement
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(sec.size() * 131 + sec[0])));
      std::vector<std::size_t> idx(knots.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = idx.size() - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.below(i + 1)]);
      idx.resize(max_knots);
      std::sort(idx.begin(), idx.end());
      std::vector<std::vector<double>> kept;
      kept.reserve(max_knots);
      for (auto i : idx) kept.push_back(knots[i]);
      knots = std::move(kept);
    }
    for (const auto& knot : knots) {
      Eigen::VectorXd col(n);
      std::vector<std::uint8_t> bits(n);
      for (int i = 0; i < n; ++i) {
        bool on = true;
        for (std::size_t k = 0; k < sec.size(); ++k)
          if (rows(i, sec[k]) < knot[k]) {
            on = false;
            break;
          }
        col[i] = on ? 1.0 : 0.0;
        bits[i] = on ? 1 : 0;
      }
      // drop all-zero, all-one (absorbed by intercept) and duplicate columns
      const double s = col.sum();
      if (s == 0.0 || s == n) continue;
      if (seen.emplace(std::move(bits), true).second) {
        out.bases.push_back({sec, knot});
        cols.push_back(std::move(col));
      }
    }
  }
  out.columns.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.columns.col(j) = cols[j];
  return out;
}

double HALModel::linear_predictor(const Eigen::VectorXd& x) const {
  double lp = intercept;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (beta[t] == 0.0) continue;
    bool on = true;
    const auto& b = terms[t];
    for (std::size_t k = 0; k < b.section.size(); ++k)
      if (x[b.section[k]] < b.knot[k]) {
        on = false;
        break;
      }
    if (on) lp += beta[t];
  }
  return lp;
}

double HALModel::predict(const Eigen::VectorXd& x) const {
  const double lp = clamp(linear_predictor(x), -kLinPredClamp, kLinPredClamp);
  return family == Family::binomial ? expit(lp) : std::exp(lp);
}

std::size_t HALModel::active_count() const {
  std::size_t c = 0;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) ++c;
  return c;
}

namespace {

struct GlmWork {
  Eigen::VectorXd mu;   // mean
  Eigen::VectorXd w;    // IRLS weight
  Eigen::VectorXd res;  // y - mu
};

void link_update(Family fam, const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                 GlmWork& wk) {
  const Eigen::Index n = eta.size();
  wk.mu.resize(n);
  wk.w.resize(n);
  wk.res.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fam == Family::binomial) {
      const double p = expit(clamp(eta[i], -kLinPredClamp, kLinPredClamp));
      wk.mu[i] = p;
      wk.w[i] = std::max(p * (1.0 - p), 1e-10);
    } else {
      const double m = std::exp(clamp(eta[i], -kLinPredClamp, kLinPredClamp));
      wk.mu[i] = m;
      wk.w[i] = std::max(m, 1e-10);
    }
    wk.res[i] = y[i] - wk.mu[i];
  }
}

}  // namespace

HALModel fit_hal_on_basis(const BasisSet& basis, const Eigen::VectorXd& y, Family family,
                          double lambda, const Eigen::VectorXd* weights,
                          const Eigen::VectorXd* offset, const HalOptions& opt) {
  const Eigen::Index n = y.size();
  const Eigen::Index m = basis.columns.cols();
  Eigen::VectorXd w0 = weights ? *weights : Eigen::VectorXd::Ones(n);
  const double wsum = w0.sum();

  HALModel model;
  model.family = family;
  model.lambda = lambda;
  model.terms = basis.bases;
  model.beta = Eigen::VectorXd::Zero(m);
  // intercept at the null model
  if (family == Family::binomial) {
    const double ybar = clamp(w0.dot(y) / wsum, 1e-10, 1.0 - 1e-10);
    model.intercept = logit(ybar);
  } else {
    double off_adj = 0.0;
    if (offset) {
      // exposure-weighted rate
      double num = w0.dot(y), den = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) den += w0[i] * std::exp((*offset)[i]);
      model.intercept = std::log(std::max(num / std::max(den, 1e-300), 1e-10));
      (void)off_adj;
    } else {
      model.intercept = std::log(std::max(w0.dot(y) / wsum, 1e-10));
    }
  }

  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, model.intercept);
  if (offset) eta += *offset;
  GlmWork wk;
  int it = 0;
  bool converged = false;
  // outer IRLS loop with cyclic soft-threshold updates on the quadratic
  // approximation; penalty applies to basis coefficients only
  for (; it < opt.max_iter; ++it) {
    link_update(family, eta, y, wk);
    double max_change = 0.0;

    {  // unpenalized intercept step
      const double num = (w0.array() * wk.res.array()).sum();
      const double den = (w0.array() * wk.w.array()).sum();
      const double d = num / std::max(den, 1e-300);
      model.intercept += d;
      eta.array() += d;
      max_change = std::max(max_change, std::abs(d));
      link_update(family, eta, y, wk);
    }

    for (Eigen::Index j = 0; j < m; ++j) {
      const auto col = basis.columns.col(j);
      // columns are 0/1 so x^2 == x
      const double denom = (w0.array() * wk.w.array() * col.array()).sum();
      if (denom <= 1e-300) continue;
      const double grad = (w0.array() * wk.res.array() * col.array()).sum();
      const double u = denom * model.beta[j] + grad;
      const double thr = lambda * wsum;
      double bnew = 0.0;
      if (u > thr)
        bnew = (u - thr) / denom;
      else if (u < -thr)
        bnew = (u + thr) / denom;
      const double d = bnew - model.beta[j];
      if (d != 0.0) {
        model.beta[j] = bnew;
        eta += d * col;
        wk.res -= d * (wk.w.array() * col.array()).matrix();  // quadratic-model residual
        max_change = std::max(max_change, std::abs(d));
      }
    }
    if (max_change < opt.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NoConvergence("coordinate descent hit the iteration cap");

  // KKT on the exact (non-quadratic) gradient
  link_update(family, eta, y, wk);
  model.kkt_ok = true;
  model.kkt_worst = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double g = (w0.array() * wk.res.array() * basis.columns.col(j).array()).sum() / wsum;
    double viol = 0.0;
    if (model.beta[j] != 0.0)
      viol = std::abs(std::abs(g) - lambda);
    else
      viol = std::max(0.0, std::abs(g) - lambda);
    model.kkt_worst = std::max(model.kkt_worst, viol);
  }
  if (model.kkt_worst > 1e-5) model.kkt_ok = false;

  model.norm_bound = std::abs(model.intercept) + model.beta.cwiseAbs().sum();
  return model;
}

HALModel fit_hal(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                 double lambda, const HalOptions& opt, const Eigen::VectorXd* weights,
                 const Eigen::VectorXd* offset) {
  const BasisSet basis = enumerate_basis(rows, opt.max_order, opt.max_knots, opt.seed);
  return fit_hal_on_basis(basis, y, family, lambda, weights, offset, opt);
}

namespace {

double mean_loss(Family fam, const Eigen::VectorXd& y, const Eigen::VectorXd& eta,
                 const Eigen::VectorXd& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double e = clamp(eta[i], -kLinPredClamp, kLinPredClamp);
    if (fam == Family::binomial) {
      // quasi-binomial negative log-likelihood, fractional outcomes allowed
      total += w[i] * (std::log1p(std::exp(-std::abs(e))) + std::max(e, 0.0) - y[i] * e);
    } else {
      total += w[i] * (std::exp(e) - y[i] * e);
    }
  }
  return total / std::max(w.sum(), 1e-300);
}

}  // namespace

std::vector<double> default_lambda_path(const BasisSet& basis, const Eigen::VectorXd& y,
                                        Family family, int n_lambda,
                                        const Eigen::VectorXd* weights,
                                        const Eigen::VectorXd* offset) {
  const Eigen::Index n = y.size();
  Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);
  const double wsum = w.sum();
  // gradient at the intercept-only null
  double mu0;
  if (family == Family::binomial)
    mu0 = clamp(w.dot(y) / wsum, 1e-10, 1.0 - 1e-10);
  else
    mu0 = std::max(w.dot(y) / wsum, 1e-10);
  Eigen::VectorXd res(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = mu0;
    if (family == Family::poisson && offset) m = mu0 * std::exp((*offset)[i]);
    res[i] = y[i] - m;
  }
  double lmax = 1e-12;
  for (Eigen::Index j = 0; j < basis.columns.cols(); ++j)
    lmax = std::max(lmax,
                    std::abs((w.array() * res.array() * basis.columns.col(j).array()).sum()) / wsum);
  lmax *= 1.001;
  std::vector<double> path(n_lambda);
  const double lmin = lmax * 1e-3;
  for (int k = 0; k < n_lambda; ++k)
    path[k] = lmax * std::pow(lmin / lmax, k / std::max(1.0, n_lambda - 1.0));
  return path;
}

CvResult cv_norm_bound(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                       int V, const std::vector<double>& lambdas, bool one_se,
                       const HalOptions& opt, std::uint64_t fold_seed) {
  if (V < 2) throw FoldTooSmall("V must be >= 2");
  if (lambdas.empty()) throw ConfigError("empty lambda grid");
  const Eigen::Index n = rows.rows();
  if (n < V) throw FoldTooSmall("fewer rows than folds");

  // deterministic shuffled fold assignment
  std::vector<int> fold(n);
  {
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(fold_seed, 0xF01D));
    for (Eigen::Index i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    for (Eigen::Index i = 0; i < n; ++i) fold[idx[i]] = static_cast<int>(i % V);
  }

  const std::size_t L = lambdas.size();
  std::vector<std::vector<double>> fold_loss(L, std::vector<double>(V, 0.0));
  for (int v = 0; v < V; ++v) {
    std::vector<Eigen::Index> tr, va;
    for (Eigen::Index i = 0; i < n; ++i) (fold[i] == v ? va : tr).push_back(i);
    if (tr.empty() || va.empty()) throw FoldTooSmall("empty fold");
    Eigen::MatrixXd Xtr(tr.size(), rows.cols());
    Eigen::VectorXd ytr(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      Xtr.row(i) = rows.row(tr[i]);
      ytr[i] = y[tr[i]];
    }
    const BasisSet basis = enumerate_basis(Xtr, opt.max_order, opt.max_knots, opt.seed);
    for (std::size_t k = 0; k < L; ++k) {
      const HALModel m = fit_hal_on_basis(basis, ytr, family, lambdas[k], nullptr, nullptr, opt);
      Eigen::VectorXd eta(va.size()), yv(va.size());
      for (std::size_t i = 0; i < va.size(); ++i) {
        eta[i] = m.linear_predictor(rows.row(va[i]).transpose());
        yv[i] = y[va[i]];
      }
      fold_loss[k][v] = mean_loss(family, yv, eta, Eigen::VectorXd::Ones(va.size()));
    }
  }

  CvResult out;
  out.risks.resize(L);
  out.risk_ses.resize(L);
  for (std::size_t k = 0; k < L; ++k) {
    double mean = 0.0;
    for (int v = 0; v < V; ++v) mean += fold_loss[k][v];
    mean /= V;
    double var = 0.0;
    for (int v = 0; v < V; ++v) var += (fold_loss[k][v] - mean) * (fold_loss[k][v] - mean);
    var /= std::max(1, V - 1);
    out.risks[k] = mean;
    out.risk_ses[k] = std::sqrt(var / V);
  }
  int best = 0;
  for (std::size_t k = 1; k < L; ++k)
    if (out.risks[k] < out.risks[best]) best = static_cast<int>(k);
  if (one_se) {
    // largest lambda within one SE of the minimum
    const double cutoff = out.risks[best] + out.risk_ses[best];
    int pick = best;
    for (std::size_t k = 0; k < L; ++k) {
      if (out.risks[k] <= cutoff) {
        pick = static_cast<int>(k);
        break;  // lambdas are ordered decreasing; first eligible is largest
      }
    }
    best = pick;
  }
  out.index = best;
  out.lambda = lambdas[best];
  return out;
}

HALModel fit_hal_cv(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, Family family,
                    int V, bool one_se, const HalOptions& opt) {
  const BasisSet basis = enumerate_basis(rows, opt.max_order, opt.max_knots, opt.seed);
  const auto path = default_lambda_path(basis, y, family);
  const CvResult cv = cv_norm_bound(rows, y, family, V, path, one_se, opt);
  return fit_hal_on_basis(basis, y, family, cv.lambda, nullptr, nullptr, opt);
}

std::string to_json(const HALModel& model) {
  nlohmann::json j;
  j["family"] = model.family == Family::binomial ? "binomial" : "poisson";
  j["intercept"] = model.intercept;
  j["lambda"] = model.lambda;
  j["norm_bound"] = model.norm_bound;
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t t = 0; t < model.terms.size(); ++t) {
    if (model.beta[t] == 0.0) continue;
    terms.push_back({{"section", model.terms[t].section},
                     {"knot", model.terms[t].knot},
                     {"beta", model.beta[t]}});
  }
  j["terms"] = terms;
  return j.dump();
}

}  // namespace cttmle::hal
