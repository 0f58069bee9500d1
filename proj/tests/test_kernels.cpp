#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "simtraffic/errors.hpp"
#include "simtraffic/kernels.hpp"

using namespace simtraffic;

namespace {

ModelParams test_params() {
  ModelParams p;
  p.alpha = 0.7;
  p.beta = 1.3;
  p.eps0 = 4.0;
  p.v_max = 2.0;
  p.d_mid = 2.0;
  p.p_max = 1.0;
  p.a_ref = 0.5;
  return p;
}

}  // namespace

TEST_CASE("optimal velocity endpoints and midpoint") {
  auto p = test_params();
  CHECK(std::abs(optimal_velocity(0.0, p)) <= 1e-15);
  CHECK(std::abs(optimal_velocity(10.0 * p.d_mid, p) - p.v_max) < 1e-6 * p.v_max);

  p.v_max = 30.0;
  p.d_mid = 2.5;
  // 30 tanh(2.5) / (1 + tanh(2.5)), evaluated independently.
  CHECK(optimal_velocity(2.5, p) == doctest::Approx(14.898930795013719).epsilon(1e-14));
  CHECK_THROWS_AS(optimal_velocity(-0.1, p), std::domain_error);
}

TEST_CASE("weight h support, peak and interior value") {
  const auto p = test_params();
  CHECK(weight_h(0.0, p) == 0.0);
  CHECK(weight_h(-p.eps0, p) == 0.0);
  CHECK(weight_h(0.5, p) == 0.0);
  CHECK(weight_h(-2.0 * p.eps0, p) == 0.0);
  CHECK(weight_h(-p.eps0 / 2.0, p) == doctest::Approx(1.0).epsilon(1e-15));
  // exp(1 - 1/(1 - 0.25))
  CHECK(weight_h(-p.eps0 / 4.0, p) == doctest::Approx(0.7165313105737893).epsilon(1e-14));
}

TEST_CASE("H1 values") {
  const auto p = test_params();
  CHECK(kernel_H1(-2.0 * p.eps0, 1.0, p) == 0.0);
  CHECK(kernel_H1(-p.eps0 / 2.0, optimal_velocity(p.eps0 / 2.0, p), p) == doctest::Approx(0.0));
  // alpha V(eps0/2) with alpha = 0.7, V(2) for v_max = 2, d_mid = 2.
  CHECK(kernel_H1(-p.eps0 / 2.0, 0.0, p) == doctest::Approx(0.687179052777886).epsilon(1e-14));
  CHECK_THROWS_AS(kernel_H1(-1.0, -0.5, p), std::domain_error);
}

TEST_CASE("H2 values") {
  const auto p = test_params();
  CHECK(kernel_H2(-1.0, 0.0, p) == 0.0);
  CHECK(kernel_H2(-3.7, 0.0, p) == 0.0);
  // beta (-dv) / (eps0/2)^2 with dv = 0.8
  CHECK(kernel_H2(-p.eps0 / 2.0, 0.8, p) == doctest::Approx(-0.26).epsilon(1e-14));
  CHECK(kernel_H2(0.0, 5.0, p) == 0.0);
}

TEST_CASE("lane change probability") {
  const auto p = test_params();
  CHECK(lane_change_prob(-3.0, p) == 0.0);
  CHECK(lane_change_prob(0.0, p) == 0.0);
  CHECK(lane_change_prob(p.a_ref, p) == doctest::Approx(0.6321205588285577).epsilon(1e-14));
  CHECK(lane_change_prob(1e9, p) <= p.p_max);
}

TEST_CASE("monotonicity of V and p on a dense grid") {
  const auto p = test_params();
  double prev_v = -1.0, prev_p = -1.0;
  for (int i = 0; i <= 10000; ++i) {
    const double d = 20.0 * i / 10000.0;
    const double v = optimal_velocity(d, p);
    const double r = lane_change_prob(d - 10.0, p);
    CHECK(v >= prev_v);
    CHECK(r >= prev_p);
    CHECK(r <= p.p_max);
    prev_v = v;
    prev_p = r;
  }
}

TEST_CASE("h vanishes off (-eps0, 0) and is nonnegative") {
  const auto p = test_params();
  for (int i = -30000; i <= 30000; ++i) {
    const double x = i * 1e-3;
    const double h = weight_h(x, p);
    CHECK(h >= 0.0);
    if (x <= -p.eps0 || x >= 0.0) CHECK(h == 0.0);
  }
}

TEST_CASE("H1 and H2 are bounded and Lipschitz on R x [0, 2 v_max]") {
  const auto p = test_params();
  const double dx = 1e-4;
  double max_h1 = 0.0, max_h2 = 0.0, max_slope = 0.0;
  for (int i = 0; i <= 1200; ++i) {
    const double x = -6.0 + 7.0 * i / 1200.0;
    for (int k = 0; k <= 20; ++k) {
      const double v = 2.0 * p.v_max * k / 20.0;
      const double h1 = kernel_H1(x, v, p);
      const double h2 = kernel_H2(x, v - 1.0, p);
      max_h1 = std::max(max_h1, std::abs(h1));
      max_h2 = std::max(max_h2, std::abs(h2));
      max_slope = std::max(max_slope, std::abs(kernel_H1(x + dx, v, p) - h1) / dx);
      max_slope = std::max(max_slope, std::abs(kernel_H2(x + dx, v - 1.0, p) - h2) / dx);
    }
  }
  CHECK(std::isfinite(max_h1));
  CHECK(max_h1 <= p.alpha * 2.0 * p.v_max + 1e-12);
  CHECK(max_h2 <= p.beta * kernel_bounds(p).h_over_x2 * (2.0 * p.v_max + 1.0));
  CHECK(max_slope < 100.0);
}

TEST_CASE("params validation reports field paths") {
  nlohmann::json j = params_to_json(test_params());
  j["eps0"] = -1.0;
  j.erase("alpha");
  j["bogus"] = 3;
  std::vector<std::string> errors;
  params_from_json(j, errors);
  auto has = [&](const std::string& prefix) {
    for (const auto& e : errors) {
      if (e.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };
  CHECK(has("params.eps0"));
  CHECK(has("params.alpha"));
  CHECK(has("params.bogus"));

  nlohmann::json k = params_to_json(test_params());
  k.erase("gw_a");
  k.erase("gw_b");
  const auto p = params_from_json(k);
  CHECK(p.gw_a == 1.0);
  CHECK(p.gw_b == 1.0);
  CHECK(p.timer_limit() == p.horizon_T / p.n_tau);
}

TEST_CASE("control schedule is piecewise constant and right-continuous") {
  ControlSchedule u({0.0, 0.5, 1.0}, {0.1, 0.4, 0.0});
  CHECK(u.value_at(0.0) == 0.1);
  CHECK(u.value_at(0.49) == 0.1);
  CHECK(u.value_at(0.5) == 0.4);
  CHECK(u.value_at(2.0) == 0.0);
  CHECK(u.next_breakpoint_after(0.5) == 1.0);
  CHECK(std::isinf(u.next_breakpoint_after(1.0)));
  CHECK_THROWS_AS(ControlSchedule({0.0, 0.0}, {0.1, 0.2}), ValidationError);
  ModelParams p;
  p.u_max = 0.3;
  CHECK(u.validation_errors(p, "u").size() == 1);
}
