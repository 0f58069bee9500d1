#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "simtraffic/cloud.hpp"
#include "simtraffic/params.hpp"

namespace simtraffic {

enum class VehicleClass { Autonomous, Human };

/// One vehicle of the microscopic system. Lanes are numbered 1..m_lanes.
struct VehicleState {
  int id = 0;
  VehicleClass cls = VehicleClass::Human;
  int lane = 1;
  double x = 0.0;
  double v = 0.0;
  double timer = 0.0;                      // in [0, T1)
  std::optional<ControlSchedule> control;  // present iff autonomous

  bool autonomous() const { return cls == VehicleClass::Autonomous; }
  double control_at(double t) const { return control ? control->value_at(t) : 0.0; }
};

/// Full hybrid state: continuous (x, v, timer) plus the lane of every vehicle.
struct MicroState {
  double time = 0.0;
  std::vector<VehicleState> vehicles;
  ModelParams params;

  /// Every violated invariant: lane range, v >= 0, timer in [0, T1),
  /// class/control consistency, unique ids, no shared (lane, x), pairwise
  /// distinct initial timers (each message names the vehicle ids involved).
  std::vector<std::string> validation_errors(const std::string& path = "vehicles") const;
  void validate() const;

  std::size_t index_of(int id) const;
  const VehicleState& vehicle(int id) const { return vehicles[index_of(id)]; }
};

/// Human atoms (mass 1/N_j each) and autonomous atoms (mass 1/M_j each) of a
/// lane; an empty class gives an empty cloud.
std::pair<ParticleCloud, ParticleCloud> empirical_measures(const MicroState& state, int lane);

struct MicroDerivative {
  double dx = 0.0;
  double dv = 0.0;
  double dtau = 1.0;
};

/// Right-hand side of the continuous dynamics at time t, one entry per
/// vehicle in state order. dv is projected to >= 0 for vehicles at rest.
std::vector<MicroDerivative> rhs_micro(const MicroState& state, double t);

/// Earliest timer expiry (absolute time) and the vehicle id that owns it.
std::pair<double, int> next_event_time(const MicroState& state);

/// Expected accelerations used by the lane-change guards.
struct CandidateAccels {
  double a_now = 0.0;     // actual acceleration on the own lane
  double a_bar_n = 0.0;   // the candidate's acceleration on the target lane
  double a_bar_l = 0.0;   // new follower's acceleration after insertion; +inf if none
};

/// Throws ValidationError if `target_lane` is not adjacent to the vehicle's lane.
CandidateAccels candidate_accels(const MicroState& state, int id, int target_lane);

struct LaneDecision {
  int target_lane = 0;            // equal to the current lane for "stay"
  bool both_sides_qualified = false;
};

/// Safety (a_bar_n >= -Delta, a_bar_l >= -Delta) and incentive
/// (a_bar_n >= a_now + Delta) on each admissible neighbor. When both
/// neighbors qualify the larger a_bar_n wins, ties go to lane + 1.
LaneDecision lane_change_decision(const MicroState& state, int id);

struct ApplyResult {
  MicroState state;
  bool cancelled = false;  // landing position occupied; treated as stay
  std::string warning;
};

/// Timer reset plus lane switch; (x, v) untouched.
ApplyResult apply_event(const MicroState& state, int id, const LaneDecision& decision);

struct VehicleSnapshot {
  int id = 0;
  int lane = 0;
  double x = 0.0;
  double v = 0.0;
};

struct LaneChangeRecord {
  double t = 0.0;
  int id = 0;
  int from = 0;
  int to = 0;  // equal to `from` when the vehicle stayed
  double x_before = 0.0, v_before = 0.0;
  double x_after = 0.0, v_after = 0.0;
};

struct TrajectoryLog {
  std::vector<double> times;
  std::vector<std::vector<VehicleSnapshot>> samples;
  std::vector<LaneChangeRecord> events;
  std::vector<std::string> warnings;
  double growth_constant = 0.0;   // C in |state(t)| <= (|state(0)| + C t) e^{C t}
  double initial_radius = 0.0;    // max over vehicles of |(x, v)| at t0
  MicroState final_state;

  std::string trajectory_csv() const;  // t,id,lane,x,v
  std::string events_csv() const;      // t,id,from,to
};

struct MicroRunOptions {
  double dt_max = 0.01;
  double sample_dt = 0.1;
  /// When non-empty, samples are taken at these times (plus t0 and t_end)
  /// instead of the uniform sample_dt grid.
  std::vector<double> sample_times;
  /// Defaults to params.horizon_T. Timer expiries at or after t_end are not processed.
  std::optional<double> t_end;
};

/// Fixed-step RK4 between timer expiries; steps are shortened to land exactly
/// on expiries, sample times and control breakpoints. Throws NumericalError on
/// non-finite state, a violated a-priori bound or a shared (lane, x).
TrajectoryLog simulate_sigma1(const MicroState& initial, const MicroRunOptions& options);

/// Max over vehicles of |(x, v)|.
double state_radius(const MicroState& state);

}  // namespace simtraffic
