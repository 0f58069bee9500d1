#pragma once

#include "simtraffic/params.hpp"

namespace simtraffic {

// Closed-form model ingredients. All functions are pure.
//
// Sign convention: kernels take the signed offset x = x_self - x_other, so a
// leader at headway d > 0 sits at x = -d. Interactions live on (-eps0, 0).

/// Optimal velocity V(d) = v_max (tanh(d - d_mid) + tanh(d_mid)) / (1 + tanh(d_mid)).
/// Throws std::domain_error for d < 0.
double optimal_velocity(double headway, const ModelParams& p);

/// Smooth bump on (-eps0, 0), peak 1 at -eps0/2, zero (to all orders) at the ends.
double weight_h(double x, const ModelParams& p);

/// Bando term alpha h(x) (V(-x) - v). Throws std::domain_error for v < 0.
double kernel_H1(double x, double v, const ModelParams& p);

/// Follow-the-leader term beta h(dx) (-dv) / dx^2; zero outside (-eps0, 0).
double kernel_H2(double dx, double dv, const ModelParams& p);

/// H1(dx, v) + H2(dx, dv) with a single evaluation of the weight.
double pair_interaction(double dx, double v, double dv, const ModelParams& p);

/// Lane-change rate p_max (1 - exp(-max(gap, 0) / a_ref)), in 1/time.
double lane_change_prob(double accel_gap, const ModelParams& p);

/// Constants for the linear-growth estimate |H1| <= alpha (v_max + |v|) and
/// |H2(dx, dv)| <= beta * h_over_x2 * |dv|.
struct KernelBounds {
  double h_over_x2;  // sup over (-eps0, 0) of h(x) / x^2, with a small safety margin
};

KernelBounds kernel_bounds(const ModelParams& p);

/// Growth constant C such that a vehicle (or particle) interacting with
/// measures of total mass <= `mass_bound` and control <= u_max satisfies
/// d/dt |(x, v)| <= C (1 + max_state_norm). Used for the a-priori bound
/// |state(t)| <= (|state(0)| + C t) e^{C t}.
double growth_constant(const ModelParams& p, double mass_bound);

/// (r0 + C t) e^{C t}.
double a_priori_radius(double r0, double growth, double t);

}  // namespace simtraffic
