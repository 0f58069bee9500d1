#include <doctest.h>

#include <cmath>

#include "simtraffic/errors.hpp"
#include "simtraffic/meanfield.hpp"
#include "simtraffic/transport.hpp"

using namespace simtraffic;

namespace {

MeanFieldState make_state(std::vector<ParticleCloud> lanes) {
  MeanFieldState s;
  s.params.m_lanes = static_cast<int>(lanes.size());
  s.lanes = std::move(lanes);
  return s;
}

AvState make_av(int id, int lane, double y, double w, double timer, double u) {
  AvState a;
  a.id = id;
  a.lane = lane;
  a.y = y;
  a.w = w;
  a.timer = timer;
  a.control = ControlSchedule::constant(u);
  return a;
}

// Lone atom on lane 1; lane 2 holds a leader tuned so that
// A^2 - A^1 = Delta + a_ref at the lone atom.
MeanFieldState tuned_pair() {
  return make_state({ParticleCloud({{0.0, 0.0, 1.0}}), ParticleCloud({{2.0, 0.07326255555493688, 1.0}})});
}

double total_mass(const MeanFieldState& s) {
  double m = 0.0;
  for (const auto& c : s.lanes) m += c.total_mass();
  return m;
}

}  // namespace

TEST_CASE("source term") {
  SUBCASE("single lane has no transfers") {
    auto s = make_state({ParticleCloud({{0, 1, 0.5}, {1, 0.2, 0.5}})});
    auto src = source_term(s, 1, 0.01);
    CHECK(src.outflow_total == 0.0);
    CHECK(src.to_lower.empty());
    CHECK(src.to_upper.empty());
  }
  SUBCASE("identical lanes have no transfers") {
    ParticleCloud c({{0, 1, 0.5}, {1, 0.2, 0.3}, {2.5, 0.7, 0.2}});
    auto s = make_state({c, c, c});
    for (int j = 1; j <= 3; ++j) CHECK(source_term(s, j, 0.01).outflow_total == 0.0);
  }
  SUBCASE("tuned gap transfers dt p_max (1 - 1/e)") {
    auto s = tuned_pair();
    const double dt = 1.0 / 64.0;
    auto src = source_term(s, 1, dt);
    REQUIRE(src.to_upper.size() == 1);
    CHECK(src.to_lower.empty());
    CHECK(src.to_upper[0].mass == doctest::Approx(dt * 0.6321205588285577).epsilon(1e-12));
    CHECK(src.to_upper[0].x == 0.0);
    CHECK(src.outflow[0] == src.to_upper[0].mass);
    // Lane 2's atom sees nothing ahead while lane 1 is behind it: no reverse flow.
    CHECK(source_term(s, 2, dt).outflow_total == 0.0);
  }
  SUBCASE("oversized step is rejected") {
    auto s = tuned_pair();
    s.params.p_max = 10.0;
    CHECK_THROWS_AS(source_term(s, 1, 0.5), NumericalError);
  }
}

TEST_CASE("flow push") {
  SUBCASE("isolated atom drifts") {
    auto s = make_state({ParticleCloud({{1.0, 0.75, 2.0}})});
    auto c = flow_push(s, 1, 0.25);
    CHECK(c[0].x == 1.1875);
    CHECK(c[0].v == 0.75);
    CHECK(c[0].mass == 2.0);
  }
  SUBCASE("follower matches a scalar RK4 oracle") {
    auto s = make_state({ParticleCloud({{0.0, 1.0, 0.5}, {1.5, 1.2, 0.5}})});
    auto c = flow_push(s, 1, 0.1);
    CHECK(c[0].x == doctest::Approx(0.09904508424728373).epsilon(1e-13));
    CHECK(c[0].v == doctest::Approx(0.9807466165112501).epsilon(1e-13));
    CHECK(c[1].x == doctest::Approx(1.62).epsilon(1e-15));
    CHECK(c.total_mass() == s.lane(1).total_mass());
  }
}

TEST_CASE("lagrangian step") {
  SUBCASE("clone lands on lane 2 and mass is conserved") {
    auto s = tuned_pair();
    SchemeParams sc;
    sc.k_dyadic = 6;
    StepReport rep;
    auto next = lagrangian_step(s, sc, std::nullopt, &rep);
    const double moved = sc.dt(s.params) * 0.6321205588285577;
    REQUIRE(next.lane(2).size() == 2);
    CHECK(next.lane(2)[1].x == 0.0);
    CHECK(next.lane(2)[1].mass == doctest::Approx(moved).epsilon(1e-12));
    CHECK(next.lane(1).total_mass() == doctest::Approx(1.0 - moved).epsilon(1e-14));
    CHECK(std::abs(total_mass(next) - 2.0) <= 1e-15);
    CHECK(rep.lanes[0].outflow == rep.lanes[1].inflow);
    CHECK(next.time == sc.dt(s.params));
  }
  SUBCASE("single lane is a pure push-forward") {
    auto s = make_state({ParticleCloud({{0.0, 1.0, 0.5}, {1.5, 1.2, 0.5}})});
    SchemeParams sc;
    auto next = lagrangian_step(s, sc, 0.1);
    CHECK(next.lane(1) == flow_push(s, 1, 0.1));
  }
}

TEST_CASE("AV lane change") {
  SUBCASE("empty neighbors with positive own acceleration: stay") {
    auto s = make_state({ParticleCloud(), ParticleCloud(), ParticleCloud()});
    s.avs.push_back(make_av(1, 2, 0.0, 1.0, 0.1, 0.3));
    CHECK(av_lane_change(s, 1) == 2);
  }
  SUBCASE("equal neighbors: lane + 1") {
    auto s = make_state({ParticleCloud(), ParticleCloud({{1.0, 0.0, 1.0}}), ParticleCloud()});
    s.avs.push_back(make_av(1, 2, 0.0, 2.0, 0.1, 0.0));
    CHECK(av_lane_change(s, 1) == 3);
  }
  SUBCASE("unequal neighbors: larger field") {
    auto s = make_state({ParticleCloud({{2.0, 3.0, 1.0}}), ParticleCloud({{1.0, 0.0, 1.0}}), ParticleCloud()});
    s.avs.push_back(make_av(1, 2, 0.0, 1.0, 0.1, 0.0));
    CHECK(av_lane_change(s, 1) == 1);
  }
  SUBCASE("simulation applies the change with continuous (y, w)") {
    auto s = make_state({ParticleCloud({{1.0, 0.0, 1.0}}), ParticleCloud()});
    s.avs.push_back(make_av(7, 1, 0.0, 2.0, 0.9, 0.0));
    SchemeParams sc;
    sc.k_dyadic = 5;
    sc.dt_max = 1.0 / 64.0;
    auto tr = simulate_sigma2(s, sc, {0.125, {}, std::nullopt});
    REQUIRE(tr.events.size() == 1);
    CHECK(tr.events[0].t == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(tr.events[0].from == 1);
    CHECK(tr.events[0].to == 2);
    CHECK(tr.times[1] == 0.125);
    CHECK(tr.avs[1][0].lane == 2);
    CHECK(tr.steps[4].t_start == tr.events[0].t);
    CHECK(tr.steps[3].dt < sc.dt(s.params));
  }
}

TEST_CASE("simulate_sigma2") {
  DensitySpec d1;
  d1.x_min = 0;
  d1.x_max = 10;
  d1.v_min = 0.0;
  d1.v_max = 0.5;
  DensitySpec d2 = d1;
  d2.v_min = 1.5;
  d2.v_max = 2.0;
  auto s = make_state({discretize(d1, 30, 1), discretize(d2, 30, 2)});
  s.params.delta_lc = 0.05;
  s.params.alpha = 2.0;
  s.avs.push_back(make_av(1, 1, 3.3, 1.0, 0.2, 0.5));
  SchemeParams sc;
  sc.k_dyadic = 6;
  sc.merge_window = 8;

  SUBCASE("mass conserved and logged") {
    auto tr = simulate_sigma2(s, sc, {0.25, {}, std::nullopt});
    CHECK(tr.times.size() == 5);
    double moved = 0.0;
    for (const auto& st : tr.steps) moved += st.source_mass;
    CHECK(moved > 0.01);
    CHECK(std::abs(total_mass(tr.final_state) - 2.0) <= 1e-12);
    CHECK(tr.events.size() == 1);
  }
  SUBCASE("merging bounds the atom count") {
    auto plain = sc;
    plain.merge_window = 1;
    auto a = simulate_sigma2(s, plain, {0.0, {}, 0.5});
    auto b = simulate_sigma2(s, sc, {0.0, {}, 0.5});
    CHECK(b.steps.back().atoms < a.steps.back().atoms / 3);
    CHECK(gw11(a.final_state.lane(1), b.final_state.lane(1)).distance < 0.05);
  }
  SUBCASE("deterministic") {
    auto a = simulate_sigma2(s, sc, {0.5, {}, std::nullopt});
    auto b = simulate_sigma2(s, sc, {0.5, {}, std::nullopt});
    CHECK(a.mass_balance_csv() == b.mass_balance_csv());
    CHECK(a.avs_csv() == b.avs_csv());
    CHECK(cloud_to_csv(a.final_state.lane(2)) == cloud_to_csv(b.final_state.lane(2)));
  }
  SUBCASE("unstable step is rejected") {
    s.params.p_max = 20.0;
    sc.k_dyadic = 3;
    CHECK_THROWS_AS(simulate_sigma2(s, sc), ValidationError);
  }
  SUBCASE("state validation names both AVs with equal timers") {
    s.avs.push_back(make_av(2, 2, 1.0, 1.0, 0.2, 0.1));
    auto errors = s.validation_errors();
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("vehicles 1 and 2") != std::string::npos);
  }
}
