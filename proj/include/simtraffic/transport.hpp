#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "simtraffic/cloud.hpp"

namespace simtraffic {

/// Mass moved from source atom `src` to target atom `dst`.
struct Match {
  std::size_t src = 0;
  std::size_t dst = 0;
  double mass = 0.0;
};

struct TransportPlan {
  std::vector<Match> matches;      // sorted by (src, dst)
  std::vector<double> destroyed;   // per source atom
  std::vector<double> created;     // per target atom
  double cost = 0.0;
};

struct TransportResult {
  double distance = 0.0;
  TransportPlan plan;
};

/// Ground metric on (x, v): sqrt(dx^2 + (velocity_weight dv)^2).
struct GroundMetric {
  double velocity_weight = 1.0;
  double operator()(const Atom& a, const Atom& b) const;
};

/// Exact W1 between equal-mass clouds (relative mismatch <= 1e-9; a residual
/// below that is left unmatched at zero cost). Throws ValidationError on
/// empty clouds or a larger mismatch.
TransportResult w1(const ParticleCloud& a, const ParticleCloud& b, GroundMetric metric = {});

/// Exact generalized Wasserstein distance W1^{a,b}: destroying or creating a
/// unit of mass costs `cost_a`, moving it costs `cost_b` times the distance.
/// Arcs with cost_b * d >= 2 cost_a are never profitable and are omitted.
/// Throws ValidationError unless cost_a, cost_b > 0.
TransportResult gw11(const ParticleCloud& a, const ParticleCloud& b, double cost_a = 1.0,
                     double cost_b = 1.0, GroundMetric metric = {});

/// Objective value of an arbitrary plan: a (sum destroyed + sum created) + b sum mass * d.
double plan_cost(const TransportPlan& plan, const ParticleCloud& a, const ParticleCloud& b,
                 double cost_a, double cost_b, GroundMetric metric = {});

/// Grid search over per-arc transported masses (multiples of
/// max(|a|, |b|) / resolution, plus the remaining capacity of the arc).
/// Independent oracle for gw11; at most 3 atoms per side, resolution >= 16.
double gw_brute(const ParticleCloud& a, const ParticleCloud& b, double cost_a, double cost_b,
                int resolution, GroundMetric metric = {});

/// Tolerance within which gw_brute matches gw11:
/// (cost_a + cost_b * diameter) * atoms^2 * max(|a|, |b|) / resolution.
double gw_brute_tolerance(const ParticleCloud& a, const ParticleCloud& b, double cost_a,
                          double cost_b, int resolution, GroundMetric metric = {});

/// CSV `src,dst,mass`; destroyed mass is written with dst = -1, created mass
/// with src = -1.
std::string plan_to_csv(const TransportPlan& plan);

}  // namespace simtraffic
