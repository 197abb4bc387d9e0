#include "cttmle/simulate.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cttmle {

namespace {

double scaled_prob(double scale, double lp) {
  return clamp(scale * expit(lp), 0.0, kHazardCeil);
}

}  // namespace

double DgpConfig::p_a0(double l0) const { return expit(a0_intercept + a0_l0 * (l0 - 3.5)); }
double DgpConfig::p_cov_monitor() const { return scaled_prob(monitoring_scale, covm_intercept); }
double DgpConfig::p_new_l1(int a) const { return expit(l1_intercept + l1_a * a); }
double DgpConfig::p_trt_monitor(double l, int a) const {
  return scaled_prob(monitoring_scale, trtm_intercept + trtm_l_not_a * l * (1 - a));
}
double DgpConfig::p_switch_on(double l, int a0) const {
  return expit(pi_intercept + pi_l * l + pi_a0 * a0);
}
double DgpConfig::p_censor(int a0, double l) const {
  return scaled_prob(monitoring_scale, cens_intercept + cens_a0 * a0 + cens_l * l);
}
double DgpConfig::p_death(int a0, int a, double l) const {
  return scaled_prob(monitoring_scale,
                     death_intercept + death_a0 * a0 + death_a * a + death_l * l +
                         death_a0_x_l * a0 * l);
}

void DgpConfig::validate() const {
  if (n < 0) throw ConfigError("n must be nonnegative");
  if (monitoring_scale <= 0.0) throw ConfigError("monitoring_scale must be positive");
  const long days = std::llround(tau);
  if (days <= 0 || std::abs(tau - days) > 1e-9)
    throw ConfigError("tau must be a positive whole number of days");
}

namespace {

constexpr double kCovOffset = 0.2;
constexpr double kTrtOffset = 0.4;
constexpr double kCensOffset = 0.6;
constexpr double kDeathOffset = 0.8;

// One subject. Under an intervention the same uniforms are consumed so that
// identical mechanisms produce identical paths.
ObservedPath simulate_subject(const DgpConfig& cfg, long subject_id, std::uint64_t seed,
                              const Intervention* g_star) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(subject_id)));
  ObservedPath path;
  path.subject_id = subject_id;
  path.tau = cfg.tau;
  const double l0 = 1.0 + static_cast<double>(rng.below(6));
  path.l0 = {l0};

  const bool a0_draw = rng.bernoulli(cfg.p_a0(l0));
  if (g_star) {
    HistorySnapshot base;
    base.l0 = path.l0;
    base.l_current = default_l_current(path.l0);
    base.t = 0.0;
    base.tau = cfg.tau;
    path.a0 = g_star->rule(base);
  } else {
    path.a0 = a0_draw ? 1 : 0;
  }

  int a = path.a0;
  double l = default_l_current(path.l0)[0];
  const int days = static_cast<int>(std::llround(cfg.tau));
  for (int d = 0; d < days; ++d) {
    if (rng.bernoulli(cfg.p_cov_monitor())) {
      const double new_l = rng.bernoulli(cfg.p_new_l1(a)) ? 1.0 : 0.0;
      path.events.push_back({d + kCovOffset, EventKind::cov_monitor, std::nullopt,
                             std::vector<double>{new_l}});
      l = new_l;
    }
    if (rng.bernoulli(cfg.p_trt_monitor(l, a))) {
      const bool on_draw = rng.bernoulli(cfg.p_switch_on(l, path.a0));
      int new_a = on_draw ? 1 : 0;
      if (g_star) {
        HistorySnapshot s = state_at(path, d + kTrtOffset);
        new_a = g_star->rule(s);
      }
      path.events.push_back({d + kTrtOffset, EventKind::trt_monitor, new_a, std::nullopt});
      a = new_a;
    }
    const bool cens_draw = rng.bernoulli(cfg.p_censor(path.a0, l));
    if (!g_star && cens_draw) {
      path.events.push_back({d + kCensOffset, EventKind::censor, std::nullopt, std::nullopt});
      return path;
    }
    if (rng.bernoulli(cfg.p_death(path.a0, a, l))) {
      path.events.push_back({d + kDeathOffset, EventKind::death, std::nullopt, std::nullopt});
      return path;
    }
  }
  return path;
}

}  // namespace

std::vector<ObservedPath> simulate_cohort(const DgpConfig& config) {
  config.validate();
  std::vector<ObservedPath> cohort(config.n);
  parallel_for(config.n, 1, [&](std::size_t i) {
    cohort[i] = simulate_subject(config, static_cast<long>(i), config.seed, nullptr);
  });
  for (const auto& p : cohort) validate_path(p);
  return cohort;
}

std::vector<ObservedPath> simulate_under_intervention(const DgpConfig& config,
                                                      const Intervention& g_star) {
  config.validate();
  std::vector<ObservedPath> cohort(config.n);
  parallel_for(config.n, 1, [&](std::size_t i) {
    cohort[i] = simulate_subject(config, static_cast<long>(i), config.seed, &g_star);
  });
  for (const auto& p : cohort) validate_path(p);
  return cohort;
}

OraclePsi true_psi(const DgpConfig& config, const Intervention& g_star, long n_mc,
                   std::uint64_t seed) {
  config.validate();
  if (n_mc < 10000) throw ConfigError("true_psi requires n_mc >= 1e4");
  double sum = 0.0;
  for (long i = 0; i < n_mc; ++i) {
    const ObservedPath p = simulate_subject(config, i, seed, &g_star);
    sum += p.outcome();
  }
  OraclePsi out;
  out.psi = sum / static_cast<double>(n_mc);
  out.mc_se = std::sqrt(out.psi * (1.0 - out.psi) / static_cast<double>(n_mc));
  out.n_mc = n_mc;
  out.intervention = g_star.name;
  return out;
}

// ---- config file ----------------------------------------------------------------

namespace {

const std::map<std::string, double DgpConfig::*>& field_map() {
  static const std::map<std::string, double DgpConfig::*> m = {
      {"tau", &DgpConfig::tau},
      {"monitoring_scale", &DgpConfig::monitoring_scale},
      {"a0_intercept", &DgpConfig::a0_intercept},
      {"a0_l0", &DgpConfig::a0_l0},
      {"covm_intercept", &DgpConfig::covm_intercept},
      {"l1_intercept", &DgpConfig::l1_intercept},
      {"l1_a", &DgpConfig::l1_a},
      {"trtm_intercept", &DgpConfig::trtm_intercept},
      {"trtm_l_not_a", &DgpConfig::trtm_l_not_a},
      {"pi_intercept", &DgpConfig::pi_intercept},
      {"pi_l", &DgpConfig::pi_l},
      {"pi_a0", &DgpConfig::pi_a0},
      {"cens_intercept", &DgpConfig::cens_intercept},
      {"cens_a0", &DgpConfig::cens_a0},
      {"cens_l", &DgpConfig::cens_l},
      {"death_intercept", &DgpConfig::death_intercept},
      {"death_a0", &DgpConfig::death_a0},
      {"death_a", &DgpConfig::death_a},
      {"death_l", &DgpConfig::death_l},
      {"death_a0_x_l", &DgpConfig::death_a0_x_l},
  };
  return m;
}

double parse_value(const std::string& v) {
  if (v == "-inf") return -1e300;
  if (v == "inf") return 1e300;
  return std::stod(v);
}

}  // namespace

DgpConfig DgpConfig::from_file(const std::string& filename) {
  std::ifstream is(filename);
  if (!is) throw ConfigError("cannot open config file " + filename);
  DgpConfig cfg;
  bool scale_given = false;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string key, value;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ConfigError("malformed config line " + std::to_string(lineno));
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    key = trim(line.substr(0, eq));
    value = trim(line.substr(eq + 1));
    try {
      if (key == "n") {
        cfg.n = std::stol(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else {
        const auto& fm = field_map();
        auto it = fm.find(key);
        if (it == fm.end()) throw ConfigError("unknown config key: " + key);
        cfg.*(it->second) = parse_value(value);
        if (key == "monitoring_scale") scale_given = true;
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value for " + key + " at line " + std::to_string(lineno));
    }
  }
  if (!scale_given) cfg.monitoring_scale = 30.0 / cfg.tau;
  cfg.validate();
  return cfg;
}

void DgpConfig::write_file(const std::string& filename) const {
  std::ofstream os(filename);
  if (!os) throw ConfigError("cannot open " + filename + " for writing");
  os << "n = " << n << "\nseed = " << seed << "\n";
  for (const auto& [key, member] : field_map()) os << key << " = " << this->*member << "\n";
}

}  // namespace cttmle
