#include <doctest.h>

#include <cmath>
#include <limits>

#include "simtraffic/errors.hpp"
#include "simtraffic/kernels.hpp"
#include "simtraffic/micro.hpp"

using namespace simtraffic;

namespace {

VehicleState human(int id, int lane, double x, double v, double timer) {
  VehicleState s;
  s.id = id;
  s.cls = VehicleClass::Human;
  s.lane = lane;
  s.x = x;
  s.v = v;
  s.timer = timer;
  return s;
}

VehicleState av(int id, int lane, double x, double v, double timer, double u) {
  VehicleState s = human(id, lane, x, v, timer);
  s.cls = VehicleClass::Autonomous;
  s.control = ControlSchedule::constant(u);
  return s;
}

MicroState make_state(std::vector<VehicleState> vehicles, int lanes = 1) {
  MicroState s;
  s.params.m_lanes = lanes;
  s.vehicles = std::move(vehicles);
  return s;
}

double max_diff(const MicroState& a, const MicroState& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
    d = std::max(d, std::abs(a.vehicles[i].x - b.vehicles[i].x));
    d = std::max(d, std::abs(a.vehicles[i].v - b.vehicles[i].v));
  }
  return d;
}

}  // namespace

TEST_CASE("empirical measures weight each class by its lane count") {
  auto s = make_state({human(1, 1, 0, 10, 0.1), human(2, 1, 5, 12, 0.2), av(3, 2, 1, 1, 0.3, 0)}, 2);
  auto [mu, nu] = empirical_measures(s, 1);
  CHECK(mu == ParticleCloud({{0, 10, 0.5}, {5, 12, 0.5}}));
  CHECK(nu.empty());
  auto [mu2, nu2] = empirical_measures(s, 2);
  CHECK(mu2.empty());
  CHECK(nu2.total_mass() == 1.0);
}

TEST_CASE("rhs_micro") {
  SUBCASE("lone vehicle feels only its control") {
    auto s = make_state({av(1, 1, 0, 1, 0.1, 0.4)});
    auto d = rhs_micro(s, 0.0);
    CHECK(d[0].dx == 1.0);
    CHECK(d[0].dv == 0.4);
    CHECK(d[0].dtau == 1.0);
  }
  SUBCASE("two-vehicle follower matches hand evaluation") {
    auto s = make_state({human(1, 1, 0.0, 1.0, 0.1), human(2, 1, 1.5, 1.2, 0.2)});
    auto d = rhs_micro(s, 0.0);
    CHECK(d[0].dv == doctest::Approx(-0.1871050820789696).epsilon(1e-13));
    CHECK(d[1].dv == 0.0);
  }
  SUBCASE("vehicle at rest does not decelerate") {
    auto s = make_state({human(1, 1, 0.0, 0.0, 0.1), human(2, 1, 1.0, 0.0, 0.2)});
    auto d = rhs_micro(s, 0.0);
    CHECK(d[0].dv >= 0.0);
  }
}

TEST_CASE("next_event_time picks the most advanced timer") {
  auto s = make_state({human(4, 1, 0, 1, 0.2), human(9, 1, 10, 1, 0.7)});
  auto [t, id] = next_event_time(s);
  CHECK(t == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(id == 9);
}

TEST_CASE("candidate accelerations") {
  SUBCASE("empty target lane") {
    auto s = make_state({av(1, 1, 10, 1, 0.1, 0.3)}, 2);
    auto c = candidate_accels(s, 1, 2);
    CHECK(c.a_now == 0.3);
    CHECK(c.a_bar_n == 0.3);
    CHECK(c.a_bar_l == std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(candidate_accels(s, 1, 3), ValidationError);
    CHECK_THROWS_AS(candidate_accels(s, 1, 0), ValidationError);
  }
  SUBCASE("follower half an interaction range behind feels the inserted candidate") {
    auto s = make_state({av(1, 1, 10, 1, 0.1, 0.3), human(2, 2, 8, 1.5, 0.2)}, 2);
    auto c = candidate_accels(s, 1, 2);
    CHECK(c.a_bar_n == 0.3);
    CHECK(c.a_bar_l == doctest::Approx(-0.6433156388887342).epsilon(1e-13));
  }
  SUBCASE("duplicate lane matches direct evaluation") {
    auto s = make_state({human(1, 1, 0, 1.0, 0.1), human(2, 1, 2, 0.5, 0.2), human(3, 1, 3, 1.5, 0.3),
                         human(4, 2, 2, 0.5, 0.4), human(5, 2, 3, 1.5, 0.5)},
                        2);
    auto c = candidate_accels(s, 1, 2);
    auto [mu1, nu1] = empirical_measures(s, 1);
    auto [mu2, nu2] = empirical_measures(s, 2);
    CHECK(c.a_now == doctest::Approx(conv_accel(mu1, nu1, 0, 1.0, s.params)).epsilon(1e-14));
    CHECK(c.a_bar_n == doctest::Approx(conv_accel(mu2, nu2, 0, 1.0, s.params)).epsilon(1e-14));
    // Own lane weights are 1/3 against 1/2 on the copy without the candidate.
    CHECK(c.a_bar_n == doctest::Approx(1.5 * c.a_now).epsilon(1e-13));
    CHECK(c.a_bar_l == std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("lane change decision") {
  // Candidate (id 1) on lane 2 is closing in on a stopped leader.
  auto base = [] {
    return std::vector<VehicleState>{human(1, 2, 0, 2, 0.1), human(2, 2, 1, 0, 0.2)};
  };
  SUBCASE("symmetric empty neighbors tie towards the higher lane") {
    auto s = make_state(base(), 3);
    auto d = lane_change_decision(s, 1);
    CHECK(d.target_lane == 3);
    CHECK(d.both_sides_qualified);
  }
  SUBCASE("only the higher lane is safe") {
    auto v = base();
    v.push_back(human(3, 1, 1, 0, 0.3));
    auto d = lane_change_decision(make_state(v, 3), 1);
    CHECK(d.target_lane == 3);
    CHECK_FALSE(d.both_sides_qualified);
  }
  SUBCASE("unequal qualifiers pick the larger expected acceleration") {
    auto v = base();
    v.push_back(human(3, 3, 3.5, 2, 0.3));
    auto s = make_state(v, 3);
    auto c3 = candidate_accels(s, 1, 3);
    REQUIRE(c3.a_bar_n < 0.0);
    REQUIRE(c3.a_bar_n >= c3.a_now + s.params.delta_lc);
    auto d = lane_change_decision(s, 1);
    CHECK(d.target_lane == 1);
    CHECK(d.both_sides_qualified);
  }
  SUBCASE("no incentive means stay") {
    auto s = make_state({human(1, 2, 0, 2, 0.1)}, 3);
    CHECK(lane_change_decision(s, 1).target_lane == 2);
  }
}

TEST_CASE("apply_event") {
  auto s = make_state({human(1, 1, 0.1 + 0.2, 1.7, 0.1), human(2, 2, 5, 1, 0.2)}, 2);
  SUBCASE("stay resets only the timer") {
    auto r = apply_event(s, 1, {1, false});
    CHECK(r.state.vehicles[0].timer == 0.0);
    CHECK(r.state.vehicles[0].lane == 1);
    CHECK(r.state.vehicles[1].timer == 0.2);
  }
  SUBCASE("change keeps position and velocity bitwise") {
    auto r = apply_event(s, 1, {2, false});
    CHECK(r.state.vehicles[0].lane == 2);
    CHECK(r.state.vehicles[0].x == s.vehicles[0].x);
    CHECK(r.state.vehicles[0].v == s.vehicles[0].v);
    CHECK_FALSE(r.cancelled);
  }
  SUBCASE("occupied landing position cancels") {
    s.vehicles[1].x = s.vehicles[0].x;
    auto r = apply_event(s, 1, {2, false});
    CHECK(r.cancelled);
    CHECK(r.state.vehicles[0].lane == 1);
    CHECK(r.state.vehicles[0].timer == 0.0);
    CHECK_FALSE(r.warning.empty());
  }
}

TEST_CASE("state validation lists every problem") {
  auto s = make_state({human(1, 1, 0, 1, 0.25), human(2, 1, 3, 1, 0.25), human(3, 4, 0, -1, 1.5)});
  auto errors = s.validation_errors();
  bool timers = false;
  for (const auto& e : errors) {
    if (e.find("vehicles 1 and 2 have equal initial timers") != std::string::npos) timers = true;
  }
  CHECK(timers);
  CHECK(errors.size() == 4);  // timers, lane, velocity, timer range
  s.vehicles[0].control = ControlSchedule::constant(0.0);
  CHECK(s.validation_errors().size() == 5);
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("simulate_sigma1") {
  SUBCASE("single free vehicle moves linearly") {
    auto s = make_state({human(1, 1, 2.0, 1.25, 0.5)});
    auto log = simulate_sigma1(s, {0.01, 0.1, {}});
    REQUIRE(log.times.size() == 11);
    for (std::size_t k = 0; k < log.times.size(); ++k) {
      CHECK(log.samples[k][0].x == doctest::Approx(2.0 + 1.25 * log.times[k]).epsilon(1e-13));
      CHECK(log.samples[k][0].v == 1.25);
    }
    REQUIRE(log.events.size() == 1);
    CHECK(log.events[0].t == 0.5);
    CHECK(log.events[0].from == log.events[0].to);
  }
  SUBCASE("initial timers beyond the timer limit are rejected") {
    MicroState s = make_state({human(1, 1, 0, 1, 0.05), av(3, 2, 1, 1, 0.61, 0.2)}, 2);
    s.params.n_tau = 4;
    s.params.horizon_T = 2.0;
    CHECK_THROWS_AS(simulate_sigma1(s, {0.02, 0.1, {}}), ValidationError);
  }
  SUBCASE("deterministic") {
    auto s = make_state({human(1, 1, 0, 1, 0.05), human(2, 1, 2, 1.2, 0.3), av(3, 2, 1, 1, 0.41, 0.2)}, 2);
    auto a = simulate_sigma1(s, {0.01, 0.05, {}});
    auto b = simulate_sigma1(s, {0.01, 0.05, {}});
    CHECK(a.trajectory_csv() == b.trajectory_csv());
    CHECK(a.events_csv() == b.events_csv());
  }
  SUBCASE("rejects bad step sizes") {
    auto s = make_state({human(1, 1, 0, 1, 0.05)});
    CHECK_THROWS_AS(simulate_sigma1(s, {0.0, 0.1, {}}), ValidationError);
  }
}

TEST_CASE("event schedule and Lipschitz bound between events") {
  MicroState s = make_state({human(1, 1, 0, 1, 0.05), human(2, 1, 2, 1.2, 0.3), human(3, 2, 1, 1.5, 0.1),
                             av(4, 2, 3, 1, 0.41, 0.2)},
                            2);
  s.params.n_tau = 4;
  s.params.horizon_T = 2.0;
  auto log = simulate_sigma1(s, {0.01, 0.05, {}});
  std::vector<std::pair<double, int>> expected;
  for (const auto& v : s.vehicles) {
    for (int k = 1; k * 0.5 - v.timer < 2.0; ++k) expected.push_back({k * 0.5 - v.timer, v.id});
  }
  std::sort(expected.begin(), expected.end());
  REQUIRE(log.events.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(log.events[i].t == doctest::Approx(expected[i].first).epsilon(1e-14));
    CHECK(log.events[i].id == expected[i].second);
    if (i > 0) CHECK(log.events[i].t > log.events[i - 1].t);
  }
  double sup = 0.0;
  for (const auto& snap : log.samples) {
    for (const auto& v : snap) sup = std::max(sup, std::hypot(v.x, v.v));
  }
  const double lip = log.growth_constant * (1.0 + sup);
  for (std::size_t k = 1; k < log.times.size(); ++k) {
    const double dt = log.times[k] - log.times[k - 1];
    for (std::size_t i = 0; i < s.vehicles.size(); ++i) {
      const auto& a = log.samples[k - 1][i];
      const auto& b = log.samples[k][i];
      CHECK(std::hypot(b.x - a.x, b.v - a.v) <= lip * dt);
    }
  }
}

TEST_CASE("RK4 self-convergence on an event-free run") {
  MicroState s = make_state({human(1, 1, 0.0, 1.0, 0.01), human(2, 1, 1.3, 0.8, 0.02),
                             human(3, 1, 2.9, 1.4, 0.03), av(4, 1, 4.0, 0.9, 0.04, 0.3),
                             human(5, 1, 5.5, 1.1, 0.05)});
  s.params.horizon_T = 4.0;
  MicroRunOptions o{0.1, 0.5, {}, 3.5};
  auto r1 = simulate_sigma1(s, o);
  o.dt_max = 0.05;
  auto r2 = simulate_sigma1(s, o);
  o.dt_max = 0.025;
  auto r3 = simulate_sigma1(s, o);
  CHECK(r1.events.empty());
  MESSAGE("RK4 self-convergence ratio " << max_diff(r1.final_state, r2.final_state) / max_diff(r2.final_state, r3.final_state));
  const double ratio = max_diff(r1.final_state, r2.final_state) / max_diff(r2.final_state, r3.final_state);
  CHECK(ratio >= 8.0);
  CHECK(ratio <= 32.0);
}
