#include "simtraffic/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simtraffic {

double optimal_velocity(double headway, const ModelParams& p) {
  if (!(headway >= 0.0)) throw std::domain_error("optimal_velocity: negative headway");
  const double t_mid = std::tanh(p.d_mid);
  return p.v_max * (std::tanh(headway - p.d_mid) + t_mid) / (1.0 + t_mid);
}

double weight_h(double x, const ModelParams& p) {
  if (!(x > -p.eps0 && x < 0.0)) return 0.0;
  const double z = 2.0 * x / p.eps0 + 1.0;
  const double s = 1.0 - z * z;
  if (s <= 0.0) return 0.0;
  return std::exp(1.0 - 1.0 / s);
}

double kernel_H1(double x, double v, const ModelParams& p) {
  if (v < 0.0) throw std::domain_error("kernel_H1: negative velocity");
  const double h = weight_h(x, p);
  if (h == 0.0) return 0.0;
  return p.alpha * h * (optimal_velocity(-x, p) - v);
}

double kernel_H2(double dx, double dv, const ModelParams& p) {
  const double h = weight_h(dx, p);
  if (h == 0.0) return 0.0;
  return p.beta * h * (-dv) / (dx * dx);
}

double pair_interaction(double dx, double v, double dv, const ModelParams& p) {
  if (v < 0.0) throw std::domain_error("pair_interaction: negative velocity");
  const double h = weight_h(dx, p);
  if (h == 0.0) return 0.0;
  return p.alpha * h * (optimal_velocity(-dx, p) - v) + p.beta * h * (-dv) / (dx * dx);
}

double lane_change_prob(double accel_gap, const ModelParams& p) {
  const double g = std::max(accel_gap, 0.0);
  return p.p_max * (1.0 - std::exp(-g / p.a_ref));
}

KernelBounds kernel_bounds(const ModelParams& p) {
  // h(x)/x^2 is smooth on (-eps0, 0) and vanishes at both ends; a dense scan
  // plus 5% margin covers the maximum.
  constexpr int kSamples = 20000;
  double best = 0.0;
  for (int i = 1; i < kSamples; ++i) {
    const double x = -p.eps0 * static_cast<double>(i) / kSamples;
    best = std::max(best, weight_h(x, p) / (x * x));
  }
  return {best * 1.05};
}

double growth_constant(const ModelParams& p, double mass_bound) {
  // |a| <= M [alpha (v_max + |v|) + beta c (|v| + |v_k|)] + u_max
  //     <= K0 + K1 r   with r = max over states of |(x, v)|.
  // d|(x,v)|/dt <= |v| + |a| <= K0 + (1 + K1) r  <=  C (1 + r).
  const double c = kernel_bounds(p).h_over_x2;
  const double k0 = mass_bound * p.alpha * p.v_max + p.u_max;
  const double k1 = mass_bound * (p.alpha + 2.0 * p.beta * c);
  return std::max(k0, 1.0 + k1);
}

double a_priori_radius(double r0, double growth, double t) {
  return (r0 + growth * t) * std::exp(growth * t);
}

}  // namespace simtraffic
