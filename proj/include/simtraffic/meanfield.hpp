#pragma once

#include <optional>
#include <string>
#include <vector>

#include "simtraffic/cloud.hpp"
#include "simtraffic/params.hpp"

namespace simtraffic {

/// An autonomous vehicle coupled to the lane densities.
struct AvState {
  int id = 0;
  int lane = 1;
  double y = 0.0;
  double w = 0.0;
  double timer = 0.0;
  ControlSchedule control;
};

/// lanes[j - 1] is the human density of lane j.
struct MeanFieldState {
  double time = 0.0;
  std::vector<ParticleCloud> lanes;
  std::vector<AvState> avs;
  ModelParams params;

  std::vector<std::string> validation_errors(const std::string& path = "state") const;
  void validate() const;

  /// Autonomous atoms of lane j, each of mass 1/M_j.
  ParticleCloud av_measure(int lane) const;
  const ParticleCloud& lane(int j) const { return lanes.at(static_cast<std::size_t>(j - 1)); }
};

struct SchemeParams {
  int k_dyadic = 6;
  double eps_mass = 1e-10;
  double grid_h = 0.0;
  double dt_max = 0.01;  // substep bound for the autonomous-vehicle ODEs
  /// Within a run, a clone is folded (at the mass-weighted centroid) into the
  /// clone its donor sent to the same lane in one of the previous
  /// merge_window - 1 steps. Keeps the atom count from growing by one per
  /// donor per step; the displacement is O(merge_window * dt). 1 disables.
  int merge_window = 1;

  double dt(const ModelParams& p) const;
  std::vector<std::string> validation_errors(const ModelParams& p,
                                             const std::string& path = "scheme") const;
};

/// Lane-change transfer out of lane j over one step of length dt, evaluated on
/// the given state.
struct SourceTransfer {
  std::vector<double> outflow;    // per atom of lane j, mass leaving
  std::vector<Atom> to_lower;     // clones bound for lane j - 1
  std::vector<Atom> to_upper;     // clones bound for lane j + 1
  std::vector<std::size_t> lower_from, upper_from;  // donor atom index of each clone
  double outflow_total = 0.0;
};

/// Throws NumericalError if an atom would lose more than its mass.
SourceTransfer source_term(const MeanFieldState& state, int lane, double dt);

/// One RK4 step of every atom of lane j under the lane's field frozen at the
/// state's measures. Masses are untouched.
ParticleCloud flow_push(const MeanFieldState& state, int lane, double dt);

struct LaneBalance {
  int lane = 0;
  double mass_before = 0.0;
  double outflow = 0.0;
  double inflow = 0.0;
  double mass_after = 0.0;   // before pruning
  double pruned = 0.0;
};

struct StepReport {
  double t_start = 0.0;
  double dt = 0.0;
  std::vector<LaneBalance> lanes;
  double source_mass = 0.0;    // total mass carried by clones
  double source_radius = 0.0;  // max |(x, v)| over clones
  std::size_t atoms = 0;     // after pruning, all lanes
};

/// Source and push from the step-start state, clones appended to their new
/// lanes at their pre-push position, prune_merge per lane, autonomous vehicles
/// advanced with the measures frozen. `dt` defaults to the scheme's step.
/// A single step has no clone history, so merge_window plays no role here.
MeanFieldState lagrangian_step(const MeanFieldState& state, const SchemeParams& scheme,
                               std::optional<double> dt = std::nullopt,
                               StepReport* report = nullptr);

/// Target lane for AV `id` at its timer expiry: a neighbor j' qualifies when
/// A^{j'}(y, w) >= own acceleration + Delta. Ties go to lane + 1, otherwise the
/// larger A^{j'} wins. Returns the current lane to stay.
int av_lane_change(const MeanFieldState& state, int id);

struct AvSnapshot {
  int id = 0;
  int lane = 0;
  double y = 0.0;
  double w = 0.0;
};

struct AvEvent {
  double t = 0.0;
  int id = 0;
  int from = 0;
  int to = 0;
};

struct MeanFieldTrajectory {
  std::vector<double> times;
  std::vector<std::vector<ParticleCloud>> lanes;  // [sample][lane - 1]
  std::vector<std::vector<AvSnapshot>> avs;
  std::vector<AvEvent> events;
  std::vector<StepReport> steps;
  double growth_constant = 0.0;
  double initial_radius = 0.0;
  MeanFieldState final_state;

  std::string avs_csv() const;           // t,id,lane,y,w
  std::string mass_balance_csv() const;  // step,t,lane,mass_before,outflow,inflow,mass_after,pruned
  std::string events_csv() const;        // t,id,from,to
};

struct MeanFieldRunOptions {
  double sample_dt = 0.0;  // 0 records only the initial and final states
  std::vector<double> sample_times;  // overrides sample_dt when non-empty
  std::optional<double> t_end;
};

/// Steps of length T / 2^k on the grid t0 + n dt, split at AV timer expiries
/// and sample times. Checks mass conservation, the source bounds and the
/// a-priori support bound after every step; throws NumericalError on failure.
MeanFieldTrajectory simulate_sigma2(const MeanFieldState& initial, const SchemeParams& scheme,
                                    const MeanFieldRunOptions& options = {});

}  // namespace simtraffic
