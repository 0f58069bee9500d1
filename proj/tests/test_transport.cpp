#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "simtraffic/errors.hpp"
#include "simtraffic/transport.hpp"

using namespace simtraffic;

namespace {

ParticleCloud random_cloud(std::mt19937_64& rng, std::size_t n, double spread = 3.0) {
  std::uniform_real_distribution<double> ux(0.0, spread), uv(0.0, spread), um(0.05, 1.0);
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < n; ++i) atoms.push_back({ux(rng), uv(rng), um(rng)});
  return ParticleCloud(std::move(atoms));
}

// min over transported fraction m in [0, 1] of a (2 - 2m) + b m d, by enumeration.
double two_delta_oracle(double d, double a, double b) {
  double best = 1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double m = k / 1000.0;
    best = std::min(best, a * (2.0 - 2.0 * m) + b * m * d);
  }
  return best;
}

void check_plan(const TransportResult& r, const ParticleCloud& a, const ParticleCloud& b, double ca,
                double cb) {
  std::vector<double> out(a.size(), 0.0), in(b.size(), 0.0);
  for (const auto& m : r.plan.matches) {
    CHECK(m.mass >= 0.0);
    out[m.src] += m.mass;
    in[m.dst] += m.mass;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(r.plan.destroyed[i] >= 0.0);
    CHECK(out[i] + r.plan.destroyed[i] == doctest::Approx(a[i].mass).epsilon(1e-12));
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    CHECK(r.plan.created[j] >= 0.0);
    CHECK(in[j] + r.plan.created[j] == doctest::Approx(b[j].mass).epsilon(1e-12));
  }
  CHECK(plan_cost(r.plan, a, b, ca, cb) == doctest::Approx(r.distance).epsilon(1e-9));
}

}  // namespace

TEST_CASE("w1 closed forms") {
  std::mt19937_64 rng(1);
  const auto mu = random_cloud(rng, 6);
  CHECK(w1(mu, mu).distance == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(w1(ParticleCloud({{0, 0, 1}}), ParticleCloud({{2.5, 0, 1}})).distance == doctest::Approx(2.5));
  CHECK_THROWS_AS(w1(ParticleCloud({{0, 0, 1}}), ParticleCloud({{0, 0, 2}})), ValidationError);
  CHECK_THROWS_AS(w1(ParticleCloud{}, ParticleCloud({{0, 0, 1}})), ValidationError);
}

TEST_CASE("w1 of paired atomic measures is bounded by the mean pairwise displacement") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Atom> p1, p2;
    double bound = 0.0;
    for (int k = 0; k < 5; ++k) {
      Atom a{u(rng), u(rng), 0.2}, b{u(rng), u(rng), 0.2};
      p1.push_back(a);
      p2.push_back(b);
      bound += std::hypot(a.x - b.x, a.v - b.v) / 5.0;
    }
    const ParticleCloud c1(p1), c2(p2);
    const auto r = w1(c1, c2);
    CHECK(r.distance <= bound + 1e-12);
    check_plan(r, c1, c2, 0.0, 1.0);
  }
}

TEST_CASE("gw11 closed forms") {
  const ParticleCloud mu({{0.0, 0.0, 0.4}, {1.0, 2.0, 0.6}});
  CHECK(std::abs(gw11(mu, ParticleCloud{}).distance - 1.0) <= 1e-12);
  CHECK(std::abs(gw11(ParticleCloud{}, mu).distance - 1.0) <= 1e-12);

  const ParticleCloud origin({{0.0, 0.0, 1.0}});
  const ParticleCloud far({{3.0, 0.0, 1.0}});
  const ParticleCloud near({{0.5, 0.0, 1.0}});
  CHECK(std::abs(gw11(origin, far).distance - two_delta_oracle(3.0, 1, 1)) <= 1e-12);
  CHECK(std::abs(gw11(origin, near).distance - two_delta_oracle(0.5, 1, 1)) <= 1e-12);
  CHECK(two_delta_oracle(3.0, 1, 1) == 2.0);
  CHECK(two_delta_oracle(0.5, 1, 1) == 0.5);

  CHECK_THROWS_AS(gw11(origin, far, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(gw11(origin, far, 1.0, -1.0), ValidationError);
}

TEST_CASE("gw_brute closed forms and errors") {
  const ParticleCloud origin({{0.0, 0.0, 1.0}});
  CHECK(gw_brute(origin, ParticleCloud({{3.0, 0.0, 1.0}}), 1, 1, 64) == doctest::Approx(2.0));
  CHECK(gw_brute(origin, ParticleCloud({{0.5, 0.0, 1.0}}), 1, 1, 64) == doctest::Approx(0.5));
  const ParticleCloud mu({{0.0, 0.0, 0.3}, {1.0, 1.0, 0.5}});
  CHECK(gw_brute(mu, mu, 1, 1, 64) == doctest::Approx(0.0).scale(1.0));
  CHECK(gw_brute(origin, ParticleCloud{}, 1, 1, 64) == 1.0);
  CHECK_THROWS_AS(gw_brute(ParticleCloud({{0, 0, 1}, {1, 0, 1}, {2, 0, 1}, {3, 0, 1}}), origin, 1, 1, 16),
                  ValidationError);
  CHECK_THROWS_AS(gw_brute(origin, origin, 1, 1, 8), ValidationError);
}

TEST_CASE("gw11 agrees with the brute-force oracle on tiny instances") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> count(0, 3);
  for (int trial = 0; trial < 60; ++trial) {
    const auto a = random_cloud(rng, static_cast<std::size_t>(count(rng)));
    const auto b = random_cloud(rng, static_cast<std::size_t>(count(rng)));
    const auto exact = gw11(a, b);
    const double brute = gw_brute(a, b, 1, 1, 16);
    CHECK(brute >= exact.distance - 1e-12);
    CHECK(brute - exact.distance <= gw_brute_tolerance(a, b, 1, 1, 16));
    check_plan(exact, a, b, 1, 1);
  }
}

TEST_CASE("gw11 properties on random clouds") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> count(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const auto a = random_cloud(rng, static_cast<std::size_t>(count(rng)));
    const auto b = random_cloud(rng, static_cast<std::size_t>(count(rng)));
    const auto c = random_cloud(rng, static_cast<std::size_t>(count(rng)));
    const double ab = gw11(a, b).distance;
    CHECK(ab == gw11(b, a).distance);
    CHECK(gw11(a, a).distance <= 1e-12);
    CHECK(ab <= gw11(a, c).distance + gw11(c, b).distance + 1e-9);
    CHECK(ab <= a.total_mass() + b.total_mass() + 1e-12);
    for (double k : {0.5, 2.0, 3.0}) {
      CHECK(gw11(a.scaled(k), b.scaled(k)).distance <= k * ab + 1e-9);
    }
  }
}

TEST_CASE("gw11 is bounded by b * w1 for equal masses") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    auto a = random_cloud(rng, 5);
    auto b = random_cloud(rng, 7);
    b = b.scaled(a.total_mass() / b.total_mass());
    for (double cb : {0.5, 1.0, 2.0}) {
      CHECK(gw11(a, b, 1.0, cb).distance <= cb * w1(a, b).distance + 1e-9);
    }
  }
}

TEST_CASE("plan CSV marks created and destroyed mass with -1") {
  const auto r = gw11(ParticleCloud({{0, 0, 1}}), ParticleCloud({{0.5, 0, 2}}));
  const auto csv = plan_to_csv(r.plan);
  CHECK(csv == "src,dst,mass\n0,0,1\n-1,0,1\n");
}

TEST_CASE("gw11 handles thousand-atom clouds quickly") {
  std::mt19937_64 rng(77);
  const auto a = random_cloud(rng, 400, 60.0);
  const auto b = random_cloud(rng, 1600, 60.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = gw11(a, b);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.distance > 0.0);
  CHECK(secs < 10.0);
  MESSAGE("400 x 1600 gw11 took " << secs << " s");
}
