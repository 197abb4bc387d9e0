#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cttmle/util.hpp"

namespace cttmle {

// ---- event records ----------------------------------------------------------

enum class EventKind { trt_monitor, cov_monitor, censor, death };

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::cov_monitor;
  std::optional<int> a_value;                  // present iff kind == trt_monitor
  std::optional<std::vector<double>> l_value;  // present iff kind == cov_monitor
};

// One subject's baseline data plus ordered event stream on (0, tau].
// The baseline treatment a0 is stored alongside l0 and written to the
// baseline CSV row; a_current is initialized from it.
struct ObservedPath {
  long subject_id = 0;
  std::vector<double> l0;
  int a0 = 0;
  double tau = 0.0;
  std::vector<EventRecord> events;

  bool censored() const;
  bool died() const;
  // N^d(tau): 1 if a death event is present.
  double outcome() const { return died() ? 1.0 : 0.0; }
};

void validate_path(const ObservedPath& path);

// ---- pooled grid ------------------------------------------------------------

struct PooledTimeGrid {
  std::vector<double> times;                     // strictly increasing union
  std::vector<std::vector<long>> contributors;   // subject ids per time
  std::size_t total_event_count = 0;             // sum of K_i
};

PooledTimeGrid merge_time_grid(const std::vector<ObservedPath>& paths);

// ---- history state ----------------------------------------------------------

// Left-limit state: everything observed strictly before t.
struct HistorySnapshot {
  std::vector<double> l0;
  int a0 = 0;
  int a_current = 0;
  std::vector<double> l_current;
  int n_a = 0;
  int n_l = 0;
  double time_since_last_trt = 0.0;
  double time_since_last_cov = 0.0;
  bool alive = true;
  bool uncensored = true;
  double t = 0.0;
  double tau = 0.0;
};

HistorySnapshot state_at(const ObservedPath& path, double t);

// Default value of the time-varying covariate before the first covariate
// monitoring; a convention, matching the shipped simulator.
std::vector<double> default_l_current(const std::vector<double>& l0);

// ---- interventions ----------------------------------------------------------

// Deterministic treatment rule plus the always-prevent-censoring constraint.
// The rule is also applied to the baseline assignment.
struct Intervention {
  std::string name;
  std::function<int(const HistorySnapshot&)> rule;

  static Intervention static_rule(int a_star);
  // registered dynamic rules addressable by name from the CLI
  static Intervention by_name(const std::string& name);
};

// ---- feature specs -----------------------------------------------------------

// Fixed-order list of named history features. Vector-valued entries (l0,
// l_current) expand to their dimension, fixed at bind() time.
class FeatureSpec {
 public:
  FeatureSpec() = default;
  FeatureSpec(std::string name, std::vector<std::string> items);

  // Resolve vector dimensions (and the period count for the period_t
  // feature) against a concrete cohort.
  void bind(int l0_dim, int l_dim, double tau = 0.0);
  std::size_t dim() const { return dim_; }
  void emit(const HistorySnapshot& s, double* out) const;
  std::vector<double> features(const HistorySnapshot& s) const;

  const std::string& name() const { return name_; }
  const std::vector<std::string>& items() const { return items_; }

  static FeatureSpec named(const std::string& name);
  static std::vector<std::string> registered_names();

 private:
  std::string name_;
  std::vector<std::string> items_;
  std::vector<int> codes_;  // compiled once; emit never parses names
  int l0_dim_ = 1;
  int l_dim_ = 1;
  int periods_ = 10;
  std::size_t dim_ = 0;
};

std::vector<double> features(const HistorySnapshot& s, const FeatureSpec& spec);

// ---- model grid ---------------------------------------------------------------

// Which counting process can jump at a tick. Four potential jump positions
// per day (cov, trt, censor, death sub-ticks) in the daily convention.
enum class Process { cov = 0, trt = 1, cens = 2, death = 3 };

const char* to_string(Process p);

struct Tick {
  double time = 0.0;
  Process process = Process::cov;
};

struct ModelGrid {
  std::vector<Tick> ticks;  // strictly increasing time, single process each
  double tau = 0.0;

  static ModelGrid daily(double tau);
  static ModelGrid from_pooled(const PooledTimeGrid& grid, double tau);

  // Index of first tick with time >= t, or ticks.size().
  std::size_t first_tick_at_or_after(double t) const;
};

// Matches an event to its lattice tick; throws IoError when the cohort does
// not follow the daily sub-tick layout.
std::size_t grid_tick_for_event(const ModelGrid& grid, const EventRecord& ev);

// ---- CSV IO -------------------------------------------------------------------

void write_cohort_csv(const std::vector<ObservedPath>& paths, std::ostream& os);
void write_cohort_csv(const std::vector<ObservedPath>& paths, const std::string& filename);
std::vector<ObservedPath> read_cohort_csv(std::istream& is, double tau);
std::vector<ObservedPath> read_cohort_csv(const std::string& filename, double tau);

}  // namespace cttmle
