#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "simtraffic/cloud.hpp"
#include "simtraffic/meanfield.hpp"
#include "simtraffic/micro.hpp"

namespace simtraffic {

/// Worker count for independent runs: SIMTRAFFIC_THREADS if set to a positive
/// integer, else the hardware concurrency (at least 1).
unsigned harness_threads();

/// Runs fn(0..count-1) on up to harness_threads() threads. Results are the
/// caller's responsibility to store by index, which keeps reports
/// independent of scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

/// Distance on the lane space X_n:
/// (1/n) sum_k (|y_k1 - y_k2| + |w_k1 - w_k2|) + W^{a,b}(mu1, mu2).
/// AVs are paired in order; the AV term is 0 when n = 0.
double x_norm(const std::vector<std::pair<double, double>>& avs1,
              const std::vector<std::pair<double, double>>& avs2, const ParticleCloud& mu1,
              const ParticleCloud& mu2, double gw_a, double gw_b);

/// Sum over lanes of x_norm, AVs paired by id order within each lane.
double x_norm_total(const MeanFieldState& a, const MeanFieldState& b);

/// Shared setup for the micro/mean-field comparison.
struct ConvergenceScenario {
  ModelParams params;
  std::vector<DensitySpec> densities;  // one per lane
  std::vector<AvState> avs;
  SchemeParams scheme;
  std::size_t reference_atoms = 2000;  // mean-field atoms per lane
  double micro_dt_max = 0.01;
  std::uint64_t seed = 0;
};

struct ConvergenceRow {
  std::size_t n = 0;
  double t = 0.0;
  int lane = 0;
  double distance = 0.0;
};

struct ConvergenceReport {
  std::vector<std::size_t> ns;
  std::vector<double> times;
  std::vector<ConvergenceRow> rows;  // sorted by (t, lane, n)
  double slack = 0.10;
  /// One entry per (t, lane): distances nonincreasing in N up to `slack`.
  std::vector<std::pair<std::pair<double, int>, bool>> cells;
  double fraction_monotone() const;
  std::string csv() const;  // t,lane,N,distance
};

/// The micro system is built with N humans per lane drawn by discretize from
/// the lane's density, each human weighing |mu0^j| / N. The mean-field system
/// starts from discretize(density, reference_atoms). Distances are W^{a,b}
/// between the lane's human cloud and the mean-field lane cloud.
ConvergenceReport convergence_experiment(const ConvergenceScenario& scenario,
                                         std::vector<std::size_t> ns, std::vector<double> times,
                                         double slack = 0.10);

/// Micro initial state used by convergence_experiment for a given N.
MicroState convergence_micro_state(const ConvergenceScenario& scenario, std::size_t n);
/// Mean-field initial state used by convergence_experiment.
MeanFieldState convergence_meanfield_state(const ConvergenceScenario& scenario);

struct StabilityRow {
  double delta = 0.0;
  double t = 0.0;
  double deviation = 0.0;
  double ratio = 0.0;  // deviation / delta
};

struct StabilityReport {
  std::vector<double> deltas;
  std::vector<double> times;
  std::vector<StabilityRow> rows;  // sorted by (t, delta descending)
  std::vector<double> amplification;  // per delta: max_t deviation(t) / deviation(0)
  double tolerance = 0.25;
  bool consistent = false;  // all ratio pairs at each t agree within tolerance
  std::string csv() const;  // delta,t,deviation,ratio
};

/// Initial data with AV (y, w) shifted by (delta, delta) and every cloud
/// translated by delta in x.
MeanFieldState perturbed(const MeanFieldState& s, double delta);

StabilityReport stability_experiment(const MeanFieldState& initial, const SchemeParams& scheme,
                                     std::vector<double> deltas, std::vector<double> times,
                                     double tolerance = 0.25);

struct SchemeGapRow {
  int k = 0;
  int k_next = 0;
  int lane = 0;
  double gap = 0.0;
};

struct SchemeOrderReport {
  std::vector<int> ks;
  std::vector<SchemeGapRow> rows;
  std::vector<double> totals;  // summed over lanes, per consecutive pair
  std::vector<double> ratios;  // totals[i] / totals[i + 1]
  double ratio_min = 1.5, ratio_max = 3.0;
  bool first_order = false;
  std::string csv() const;  // k,k_next,lane,gap
};

/// Mean-field runs at every k; W^{a,b} gaps between consecutive k at t = T.
SchemeOrderReport scheme_convergence(const MeanFieldState& initial, const SchemeParams& scheme,
                                     std::vector<int> ks);

/// Smooth bump phi(x, v) = b((x - cx) / rx) b((v - cv) / rv) with
/// b(z) = exp(1 - 1 / (1 - z^2)) on |z| < 1.
struct TestFunction {
  double cx = 0.0, cv = 0.0, rx = 1.0, rv = 1.0;
  double operator()(double x, double v) const;
  std::pair<double, double> gradient(double x, double v) const;
};

/// One-step residual of the weak form on lane j:
/// (<phi, mu(t+dt)> - <phi, mu(t)>) / dt - <phi, S> - <grad phi . omega, mu(t)>.
double weak_form_residual(const MeanFieldState& state, int lane, const TestFunction& phi, double dt,
                          const SchemeParams& scheme);

}  // namespace simtraffic
