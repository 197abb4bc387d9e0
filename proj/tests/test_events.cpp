#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sstream>

#include "cttmle/events.hpp"
#include "doctest.h"

using namespace cttmle;

namespace {

ObservedPath make_path(double tau, std::vector<EventRecord> events) {
  ObservedPath p;
  p.subject_id = 1;
  p.l0 = {3.0};
  p.a0 = 1;
  p.tau = tau;
  p.events = std::move(events);
  return p;
}

EventRecord trt(double t, int a) { return {t, EventKind::trt_monitor, a, std::nullopt}; }
EventRecord cov(double t, double l) {
  return {t, EventKind::cov_monitor, std::nullopt, std::vector<double>{l}};
}
EventRecord death(double t) { return {t, EventKind::death, std::nullopt, std::nullopt}; }
EventRecord censor(double t) { return {t, EventKind::censor, std::nullopt, std::nullopt}; }

}  // namespace

TEST_CASE("validate_path accepts an empty event list") {
  CHECK_NOTHROW(validate_path(make_path(10, {})));
}

TEST_CASE("validate_path rejects non-increasing times") {
  CHECK_THROWS_AS(validate_path(make_path(10, {cov(3, 1), cov(1, 0)})), TieError);
  CHECK_THROWS_AS(validate_path(make_path(10, {cov(2, 1), cov(2, 0)})), TieError);
}

TEST_CASE("validate_path rejects events after a terminal event") {
  CHECK_THROWS_AS(validate_path(make_path(10, {death(5), cov(6, 1)})), PostTerminalEvent);
  CHECK_THROWS_AS(validate_path(make_path(10, {censor(5), trt(6, 1)})), PostTerminalEvent);
}

TEST_CASE("validate_path rejects times outside (0, tau]") {
  CHECK_THROWS_AS(validate_path(make_path(10, {cov(11, 1)})), OutOfRange);
  CHECK_THROWS_AS(validate_path(make_path(10, {cov(0, 1)})), OutOfRange);
}

TEST_CASE("validate_path enforces mark presence by kind") {
  EventRecord bad = {1.0, EventKind::trt_monitor, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(validate_path(make_path(10, {bad})), OutOfRange);
}

TEST_CASE("merge_time_grid unions event times") {
  CHECK(merge_time_grid({}).times.empty());

  auto p1 = make_path(10, {cov(1, 1), death(3)});
  auto p2 = make_path(10, {cov(2, 0), cov(3, 1)});
  p2.subject_id = 2;
  const PooledTimeGrid grid = merge_time_grid({p1, p2});
  CHECK(grid.times == std::vector<double>{1, 2, 3});
  CHECK(grid.total_event_count == 4);
  CHECK(grid.contributors[2].size() == 2);

  auto single = make_path(10, {cov(0.5, 1), cov(2.25, 0)});
  const PooledTimeGrid g2 = merge_time_grid({single});
  CHECK(g2.times == std::vector<double>{0.5, 2.25});
}

TEST_CASE("state_at replays the left limit") {
  const auto p = make_path(10, {trt(2, 0), cov(4, 1), death(7)});

  SUBCASE("before the first event") {
    const HistorySnapshot s = state_at(p, 1.0);
    CHECK(s.n_a == 0);
    CHECK(s.n_l == 0);
    CHECK(s.a_current == 1);  // baseline treatment
    CHECK(s.l_current[0] == 0.0);
    CHECK(s.alive);
    CHECK(s.uncensored);
  }
  SUBCASE("exactly at an event time excludes the event") {
    const HistorySnapshot s = state_at(p, 2.0);
    CHECK(s.n_a == 0);
    CHECK(s.a_current == 1);
    const HistorySnapshot after = state_at(p, 2.0 + 1e-9);
    CHECK(after.n_a == 1);
    CHECK(after.a_current == 0);
  }
  SUBCASE("direct replay") {
    const auto q = make_path(10, {trt(2, 1)});
    const HistorySnapshot s = state_at(q, 3.0);
    CHECK(s.a_current == 1);
    CHECK(s.n_a == 1);
    CHECK(s.time_since_last_trt == doctest::Approx(1.0));
  }
  SUBCASE("repeated calls agree") {
    const HistorySnapshot a = state_at(p, 5.5);
    const HistorySnapshot b = state_at(p, 5.5);
    CHECK(a.n_a == b.n_a);
    CHECK(a.n_l == b.n_l);
    CHECK(a.l_current == b.l_current);
    CHECK(a.time_since_last_cov == b.time_since_last_cov);
  }
}

TEST_CASE("features emit the requested values") {
  const auto p = make_path(8, {cov(4 - 1e-9, 1.0)});
  HistorySnapshot fresh = state_at(p, 0.5);
  FeatureSpec na("x", {"n_a"});
  na.bind(1, 1);
  CHECK(na.features(fresh) == std::vector<double>{0.0});

  FeatureSpec tl("y", {"t", "l_current"});
  tl.bind(1, 1);
  const HistorySnapshot s4 = state_at(p, 4.0);
  CHECK(tl.features(s4) == std::vector<double>{4.0, 1.0});

  FeatureSpec def = FeatureSpec::named("default");
  def.bind(1, 1);
  CHECK(def.dim() == 9);
  CHECK(def.features(s4).size() == 9);

  CHECK_THROWS_AS(FeatureSpec("bad", {"no_such"}), UnknownFeature);
}

TEST_CASE("daily grid layout") {
  const ModelGrid g = ModelGrid::daily(3);
  CHECK(g.ticks.size() == 12);
  CHECK(g.ticks[0].time == doctest::Approx(0.2));
  CHECK(g.ticks[0].process == Process::cov);
  CHECK(g.ticks[3].process == Process::death);
  CHECK(g.ticks[11].time == doctest::Approx(2.8));
  CHECK_THROWS_AS(ModelGrid::daily(2.5), ConfigError);

  const ObservedPath p = make_path(3, {cov(1.2, 1.0), death(1.8)});
  CHECK(grid_tick_for_event(g, p.events[0]) == 4);
  CHECK(grid_tick_for_event(g, p.events[1]) == 7);
}

TEST_CASE("cohort CSV round trip is bit exact") {
  std::vector<ObservedPath> cohort;
  auto p1 = make_path(5, {cov(0.2, 1.0), trt(1.4, 0), censor(2.6)});
  p1.l0 = {5.0};
  auto p2 = make_path(5, {death(0.8)});
  p2.subject_id = 2;
  p2.a0 = 0;
  p2.l0 = {1.0 / 3.0};  // not exactly representable in decimal
  cohort = {p1, p2};

  std::ostringstream os;
  write_cohort_csv(cohort, os);
  std::istringstream is(os.str());
  const auto back = read_cohort_csv(is, 5);
  REQUIRE(back.size() == 2);
  CHECK(back[0].a0 == 1);
  CHECK(back[1].l0[0] == p2.l0[0]);  // bit-exact
  REQUIRE(back[0].events.size() == 3);
  CHECK(back[0].events[0].l_value->at(0) == 1.0);
  CHECK(back[0].events[1].a_value == 0);
  CHECK(back[0].events[2].kind == EventKind::censor);

  std::ostringstream os2;
  write_cohort_csv(back, os2);
  CHECK(os.str() == os2.str());
}

TEST_CASE("interventions") {
  const Intervention g1 = Intervention::static_rule(1);
  HistorySnapshot s;
  s.l_current = {1.0};
  CHECK(g1.rule(s) == 1);
  const Intervention dyn = Intervention::by_name("treat_if_l1");
  CHECK(dyn.rule(s) == 1);
  s.l_current = {0.0};
  CHECK(dyn.rule(s) == 0);
  CHECK_THROWS_AS(Intervention::by_name("nope"), ConfigError);
}
