#include "cttmle/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace cttmle {

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::trt_monitor: return "trt_monitor";
    case EventKind::cov_monitor: return "cov_monitor";
    case EventKind::censor: return "censor";
    case EventKind::death: return "death";
  }
  return "?";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "trt_monitor") return EventKind::trt_monitor;
  if (s == "cov_monitor") return EventKind::cov_monitor;
  if (s == "censor") return EventKind::censor;
  if (s == "death") return EventKind::death;
  throw IoError("unknown event kind: " + s);
}

const char* to_string(Process p) {
  switch (p) {
    case Process::cov: return "cov";
    case Process::trt: return "trt";
    case Process::cens: return "cens";
    case Process::death: return "death";
  }
  return "?";
}

bool ObservedPath::censored() const {
  for (const auto& e : events)
    if (e.kind == EventKind::censor) return true;
  return false;
}

bool ObservedPath::died() const {
  for (const auto& e : events)
    if (e.kind == EventKind::death) return true;
  return false;
}

void validate_path(const ObservedPath& path) {
  double prev = 0.0;
  bool terminal_seen = false;
  int censor_count = 0;
  int death_count = 0;
  for (const auto& e : path.events) {
    if (!(e.time > 0.0) || e.time > path.tau)
      throw OutOfRange("event time outside (0, tau] for subject " + std::to_string(path.subject_id));
    if (e.time == prev)
      throw TieError("duplicate event time " + std::to_string(e.time) + " for subject " +
                     std::to_string(path.subject_id));
    if (e.time < prev)
      throw TieError("event times not increasing for subject " + std::to_string(path.subject_id));
    if (terminal_seen)
      throw PostTerminalEvent("event after censor/death for subject " + std::to_string(path.subject_id));
    const bool has_a = e.a_value.has_value();
    const bool has_l = e.l_value.has_value();
    switch (e.kind) {
      case EventKind::trt_monitor:
        if (!has_a || has_l) throw OutOfRange("trt_monitor must carry a_value only");
        break;
      case EventKind::cov_monitor:
        if (has_a || !has_l) throw OutOfRange("cov_monitor must carry l_value only");
        break;
      case EventKind::censor:
        if (has_a || has_l) throw OutOfRange("censor must carry no mark");
        ++censor_count;
        terminal_seen = true;
        break;
      case EventKind::death:
        if (has_a || has_l) throw OutOfRange("death must carry no mark");
        ++death_count;
        terminal_seen = true;
        break;
    }
    prev = e.time;
  }
  if (censor_count > 1 || death_count > 1)
    throw PostTerminalEvent("multiple terminal events for subject " + std::to_string(path.subject_id));
}

PooledTimeGrid merge_time_grid(const std::vector<ObservedPath>& paths) {
  std::map<double, std::vector<long>> by_time;
  std::size_t total = 0;
  for (const auto& p : paths) {
    for (const auto& e : p.events) {
      by_time[e.time].push_back(p.subject_id);
      ++total;
    }
  }
  PooledTimeGrid grid;
  grid.total_event_count = total;
  grid.times.reserve(by_time.size());
  grid.contributors.reserve(by_time.size());
  for (auto& [t, subjects] : by_time) {
    grid.times.push_back(t);
    grid.contributors.push_back(std::move(subjects));
  }
  return grid;
}

std::vector<double> default_l_current(const std::vector<double>& l0) {
  // l_current starts at 1{l0_1 >= 4}; the shipped simulator draws L_0 from
  // {1..6} so this splits the population roughly in half.
  std::vector<double> l(1, 0.0);
  if (!l0.empty() && l0[0] >= 4.0) l[0] = 1.0;
  return l;
}

HistorySnapshot state_at(const ObservedPath& path, double t) {
  HistorySnapshot s;
  s.l0 = path.l0;
  s.a0 = path.a0;
  s.a_current = path.a0;
  s.l_current = default_l_current(path.l0);
  s.t = t;
  s.tau = path.tau;
  double last_trt = 0.0;
  double last_cov = 0.0;
  for (const auto& e : path.events) {
    if (e.time >= t) break;  // left limit: the record at t itself is excluded
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
      case EventKind::censor:
        s.uncensored = false;
        break;
      case EventKind::death:
        s.alive = false;
        break;
    }
  }
  s.time_since_last_trt = t - last_trt;
  s.time_since_last_cov = t - last_cov;
  return s;
}

Intervention Intervention::static_rule(int a_star) {
  Intervention g;
  g.name = "static_" + std::to_string(a_star);
  g.rule = [a_star](const HistorySnapshot&) { return a_star; };
  return g;
}

Intervention Intervention::by_name(const std::string& name) {
  if (name == "static_0") return static_rule(0);
  if (name == "static_1") return static_rule(1);
  if (name == "treat_if_l1") {
    Intervention g;
    g.name = name;
    g.rule = [](const HistorySnapshot& s) {
      return (!s.l_current.empty() && s.l_current[0] >= 0.5) ? 1 : 0;
    };
    return g;
  }
  throw ConfigError("unknown intervention: " + name);
}

// ---- feature specs ------------------------------------------------------------

namespace {

enum class Feat {
  one,
  l0,
  a0,
  a_current,
  l_current,
  n_a,
  n_l,
  t,
  t_over_tau,
  tslt_over_tau,
  tslc_over_tau,
  a0_x_l,
  l_x_not_a,
  t2_over_tau,
  l_x_t,
  a_x_t,
  period_t,
};

Feat feat_from_name(const std::string& n) {
  if (n == "1") return Feat::one;
  if (n == "l0") return Feat::l0;
  if (n == "a0") return Feat::a0;
  if (n == "a_current") return Feat::a_current;
  if (n == "l_current") return Feat::l_current;
  if (n == "n_a") return Feat::n_a;
  if (n == "n_l") return Feat::n_l;
  if (n == "t") return Feat::t;
  if (n == "t_over_tau") return Feat::t_over_tau;
  if (n == "tslt_over_tau") return Feat::tslt_over_tau;
  if (n == "tslc_over_tau") return Feat::tslc_over_tau;
  if (n == "a0_x_l") return Feat::a0_x_l;
  if (n == "l_x_not_a") return Feat::l_x_not_a;
  if (n == "t2_over_tau") return Feat::t2_over_tau;
  if (n == "l_x_t") return Feat::l_x_t;
  if (n == "a_x_t") return Feat::a_x_t;
  if (n == "period_t") return Feat::period_t;
  throw UnknownFeature("unknown feature: " + n);
}

double first(const std::vector<double>& v) { return v.empty() ? 0.0 : v[0]; }

}  // namespace

FeatureSpec::FeatureSpec(std::string name, std::vector<std::string> items)
    : name_(std::move(name)), items_(std::move(items)) {
  codes_.reserve(items_.size());
  for (const auto& it : items_) codes_.push_back(static_cast<int>(feat_from_name(it)));
  bind(1, 1);
}

void FeatureSpec::bind(int l0_dim, int l_dim, double tau) {
  l0_dim_ = l0_dim;
  l_dim_ = l_dim;
  if (tau > 0.0) periods_ = static_cast<int>(std::min<long>(10, std::llround(tau)));
  if (periods_ < 1) periods_ = 1;
  dim_ = 0;
  for (int code : codes_) {
    switch (static_cast<Feat>(code)) {
      case Feat::l0: dim_ += l0_dim_; break;
      case Feat::l_current: dim_ += l_dim_; break;
      case Feat::period_t: dim_ += periods_ - 1; break;
      default: dim_ += 1; break;
    }
  }
}

void FeatureSpec::emit(const HistorySnapshot& s, double* out) const {
  std::size_t k = 0;
  const double tau = s.tau > 0.0 ? s.tau : 1.0;
  for (int code : codes_) {
    switch (static_cast<Feat>(code)) {
      case Feat::one: out[k++] = 1.0; break;
      case Feat::l0:
        for (int j = 0; j < l0_dim_; ++j) out[k++] = j < (int)s.l0.size() ? s.l0[j] : 0.0;
        break;
      case Feat::a0: out[k++] = s.a0; break;
      case Feat::a_current: out[k++] = s.a_current; break;
      case Feat::l_current:
        for (int j = 0; j < l_dim_; ++j) out[k++] = j < (int)s.l_current.size() ? s.l_current[j] : 0.0;
        break;
      case Feat::n_a: out[k++] = s.n_a; break;
      case Feat::n_l: out[k++] = s.n_l; break;
      case Feat::t: out[k++] = s.t; break;
      case Feat::t_over_tau: out[k++] = s.t / tau; break;
      case Feat::tslt_over_tau: out[k++] = s.time_since_last_trt / tau; break;
      case Feat::tslc_over_tau: out[k++] = s.time_since_last_cov / tau; break;
      case Feat::a0_x_l: out[k++] = s.a0 * first(s.l_current); break;
      case Feat::l_x_not_a: out[k++] = first(s.l_current) * (1 - s.a_current); break;
      case Feat::t2_over_tau: out[k++] = (s.t / tau) * (s.t / tau); break;
      case Feat::l_x_t: out[k++] = first(s.l_current) * s.t / tau; break;
      case Feat::a_x_t: out[k++] = s.a_current * s.t / tau; break;
      case Feat::period_t: {
        const int period = static_cast<int>(
            clamp(std::floor(periods_ * s.t / tau), 0.0, periods_ - 1.0));
        for (int j = 1; j < periods_; ++j) out[k++] = period == j ? 1.0 : 0.0;
        break;
      }
    }
  }
}

std::vector<double> FeatureSpec::features(const HistorySnapshot& s) const {
  std::vector<double> v(dim());
  emit(s, v.data());
  return v;
}

std::vector<double> features(const HistorySnapshot& s, const FeatureSpec& spec) {
  return spec.features(s);
}

FeatureSpec FeatureSpec::named(const std::string& name) {
  if (name == "default")
    return FeatureSpec(name, {"1", "l0", "a0", "a_current", "l_current", "n_a", "n_l",
                              "t_over_tau", "tslt_over_tau"});
  if (name == "intercept_only") return FeatureSpec(name, {"1"});
  if (name == "pi_correct")
    return FeatureSpec(name, {"1", "l_current", "a0", "a_current", "period_t"});
  if (name == "pi0_correct") return FeatureSpec(name, {"1", "l0"});
  if (name == "haz_l_correct")
    return FeatureSpec(name, {"1", "a_current", "l_current", "period_t"});
  if (name == "haz_a_correct")
    return FeatureSpec(name, {"1", "l_x_not_a", "l_current", "a_current", "period_t"});
  if (name == "haz_c_correct")
    return FeatureSpec(name, {"1", "a0", "l_current", "a_current", "period_t"});
  if (name == "haz_d_correct")
    return FeatureSpec(name,
                       {"1", "a0", "a_current", "l_current", "a0_x_l", "period_t"});
  if (name == "z_misspecified") return FeatureSpec(name, {"1", "l0", "a0"});
  if (name == "haz_d_misspecified") return FeatureSpec(name, {"1", "a0"});
  if (name == "mu_correct")
    return FeatureSpec(name, {"1", "a_current", "l_current", "period_t"});
  if (name == "mu_misspecified") return FeatureSpec(name, {"1"});
  if (name == "z_rich")
    return FeatureSpec(name, {"1", "l0", "a0", "a_current", "l_current", "n_a", "n_l",
                              "t_over_tau", "tslt_over_tau", "t2_over_tau", "l_x_t", "a_x_t",
                              "a0_x_l"});
  throw UnknownFeature("unknown feature spec: " + name);
}

std::vector<std::string> FeatureSpec::registered_names() {
  return {"default",       "intercept_only", "pi_correct",    "pi0_correct",
          "haz_l_correct", "haz_a_correct",  "haz_c_correct", "haz_d_correct",
          "z_misspecified", "haz_d_misspecified", "mu_correct", "mu_misspecified", "z_rich"};
}

// ---- model grid -----------------------------------------------------------------

namespace {
constexpr double kSubtickOffset[4] = {0.2, 0.4, 0.6, 0.8};
}

ModelGrid ModelGrid::daily(double tau) {
  const int days = static_cast<int>(std::llround(tau));
  if (days <= 0 || std::abs(tau - days) > 1e-9)
    throw ConfigError("daily grid requires a positive integer horizon");
  ModelGrid g;
  g.tau = tau;
  g.ticks.reserve(static_cast<std::size_t>(days) * 4);
  for (int d = 0; d < days; ++d)
    for (int j = 0; j < 4; ++j)
      g.ticks.push_back({d + kSubtickOffset[j], static_cast<Process>(j)});
  return g;
}

ModelGrid ModelGrid::from_pooled(const PooledTimeGrid& pooled, double tau) {
  // Generic fallback: every pooled time is a potential jump point of each
  // process; within-time order follows the canonical cov, trt, cens, death.
  ModelGrid g;
  g.tau = tau;
  g.ticks.reserve(pooled.times.size() * 4);
  for (double t : pooled.times)
    for (int j = 0; j < 4; ++j) g.ticks.push_back({t, static_cast<Process>(j)});
  return g;
}

std::size_t ModelGrid::first_tick_at_or_after(double t) const {
  std::size_t lo = 0, hi = ticks.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (ticks[mid].time < t)
      lo = mid + 1;
    else
      hi = mid;
  }
  return lo;
}

std::size_t grid_tick_for_event(const ModelGrid& grid, const EventRecord& ev) {
  const std::size_t i = grid.first_tick_at_or_after(ev.time - 1e-9);
  if (i >= grid.ticks.size() || std::abs(grid.ticks[i].time - ev.time) > 1e-9)
    throw IoError("event time does not align with the model grid");
  Process expected = Process::cov;
  switch (ev.kind) {
    case EventKind::cov_monitor: expected = Process::cov; break;
    case EventKind::trt_monitor: expected = Process::trt; break;
    case EventKind::censor: expected = Process::cens; break;
    case EventKind::death: expected = Process::death; break;
  }
  // scan within the equal-time block for the matching process slot
  std::size_t j = i;
  while (j < grid.ticks.size() && std::abs(grid.ticks[j].time - ev.time) <= 1e-9) {
    if (grid.ticks[j].process == expected) return j;
    ++j;
  }
  throw IoError("event kind does not match any grid slot at its time");
}

// ---- CSV IO ----------------------------------------------------------------------

namespace {

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_cohort_csv(const std::vector<ObservedPath>& paths, std::ostream& os) {
  std::size_t d = 1;
  for (const auto& p : paths) d = std::max(d, p.l0.size());
  os << "subject_id,time,kind,a_value";
  for (std::size_t j = 1; j <= d; ++j) os << ",l_value_" << j;
  os << "\n";
  auto lrow = [&](const std::vector<double>* l) {
    std::string s;
    for (std::size_t j = 0; j < d; ++j) {
      s += ',';
      if (l && j < l->size()) s += fmt_double((*l)[j]);
    }
    return s;
  };
  for (const auto& p : paths) {
    os << p.subject_id << ",0,baseline," << p.a0 << lrow(&p.l0) << "\n";
    for (const auto& e : p.events) {
      os << p.subject_id << ',' << fmt_double(e.time) << ',' << to_string(e.kind) << ',';
      if (e.a_value) os << *e.a_value;
      os << lrow(e.l_value ? &*e.l_value : nullptr) << "\n";
    }
  }
}

void write_cohort_csv(const std::vector<ObservedPath>& paths, const std::string& filename) {
  std::ofstream os(filename);
  if (!os) throw IoError("cannot open " + filename + " for writing");
  write_cohort_csv(paths, os);
}

std::vector<ObservedPath> read_cohort_csv(std::istream& is, double tau) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty cohort file");
  const auto header = split_csv(line);
  if (header.size() < 5 || header[0] != "subject_id" || header[1] != "time" ||
      header[2] != "kind" || header[3] != "a_value")
    throw IoError("unexpected cohort CSV header");
  const std::size_t d = header.size() - 4;

  std::vector<ObservedPath> paths;
  ObservedPath* cur = nullptr;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4 + d) throw IoError("malformed CSV row at line " + std::to_string(lineno));
    const long sid = std::stol(f[0]);
    const std::string& kind = f[2];
    auto lvec = [&]() {
      std::vector<double> l;
      for (std::size_t j = 0; j < d; ++j)
        if (!f[4 + j].empty()) l.push_back(std::stod(f[4 + j]));
      return l;
    };
    if (kind == "baseline") {
      ObservedPath p;
      p.subject_id = sid;
      p.tau = tau;
      p.a0 = f[3].empty() ? 0 : std::stoi(f[3]);
      p.l0 = lvec();
      paths.push_back(std::move(p));
      cur = &paths.back();
      continue;
    }
    if (!cur || cur->subject_id != sid)
      throw IoError("event row without preceding baseline at line " + std::to_string(lineno));
    EventRecord e;
    e.time = std::stod(f[1]);
    e.kind = event_kind_from_string(kind);
    if (e.kind == EventKind::trt_monitor) e.a_value = std::stoi(f[3]);
    if (e.kind == EventKind::cov_monitor) e.l_value = lvec();
    cur->events.push_back(std::move(e));
  }
  for (auto& p : paths) validate_path(p);
  return paths;
}

std::vector<ObservedPath> read_cohort_csv(const std::string& filename, double tau) {
  std::ifstream is(filename);
  if (!is) throw IoError("cannot open " + filename);
  return read_cohort_csv(is, tau);
}

}  // namespace cttmle
