#include "simtraffic/micro.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/kernels.hpp"

namespace simtraffic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Accelerations of every vehicle for given (lane, x, v), with controls already
// evaluated. Negative stage velocities are read as 0 and the vector field is
// projected so a vehicle at rest never decelerates.
std::vector<double> accelerations(const std::vector<VehicleState>& vehicles,
                                  const std::vector<double>& xs, const std::vector<double>& vs,
                                  const std::vector<double>& controls, const ModelParams& p) {
  const int m = p.m_lanes;
  std::vector<std::size_t> humans(m + 1, 0), avs(m + 1, 0);
  for (const auto& veh : vehicles) (veh.autonomous() ? avs : humans)[veh.lane]++;
  std::vector<std::vector<Atom>> mu(m + 1), nu(m + 1);
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& veh = vehicles[i];
    const double vel = std::max(vs[i], 0.0);
    if (veh.autonomous()) {
      nu[veh.lane].push_back({xs[i], vel, 1.0 / static_cast<double>(avs[veh.lane])});
    } else {
      mu[veh.lane].push_back({xs[i], vel, 1.0 / static_cast<double>(humans[veh.lane])});
    }
  }
  std::vector<LaneField> fields(m + 1);
  for (int j = 1; j <= m; ++j) {
    fields[j] = LaneField(ParticleCloud(std::move(mu[j])), ParticleCloud(std::move(nu[j])), p);
  }
  std::vector<double> acc(vehicles.size());
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const double vel = std::max(vs[i], 0.0);
    double a = fields[vehicles[i].lane](xs[i], vel) + controls[i];
    if (vel <= 0.0 && a < 0.0) a = 0.0;
    acc[i] = a;
  }
  return acc;
}

std::vector<double> controls_at(const std::vector<VehicleState>& vehicles, double t) {
  std::vector<double> u(vehicles.size());
  for (std::size_t i = 0; i < vehicles.size(); ++i) u[i] = vehicles[i].control_at(t);
  return u;
}

void require_finite(const MicroState& s) {
  for (const auto& veh : s.vehicles) {
    if (!std::isfinite(veh.x) || !std::isfinite(veh.v)) {
      throw NumericalError(fmt::format("non-finite state for vehicle {} at t={}", veh.id,
                                       format_real(s.time)));
    }
  }
}

void require_exclusion(const MicroState& s) {
  std::vector<std::pair<std::pair<int, double>, int>> keys;
  keys.reserve(s.vehicles.size());
  for (const auto& veh : s.vehicles) keys.push_back({{veh.lane, veh.x}, veh.id});
  std::sort(keys.begin(), keys.end());
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (keys[i].first == keys[i - 1].first) {
      throw NumericalError(fmt::format("vehicles {} and {} share lane {} and position {} at t={}",
                                       keys[i - 1].second, keys[i].second, keys[i].first.first,
                                       format_real(keys[i].first.second), format_real(s.time)));
    }
  }
}

}  // namespace

double state_radius(const MicroState& state) {
  double r = 0.0;
  for (const auto& veh : state.vehicles) r = std::max(r, std::hypot(veh.x, veh.v));
  return r;
}

std::vector<std::string> MicroState::validation_errors(const std::string& path) const {
  std::vector<std::string> errors = params.validation_errors("params");
  if (!errors.empty()) return errors;
  const double t1 = params.timer_limit();
  std::map<int, std::size_t> ids;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& veh = vehicles[i];
    const std::string at = fmt::format("{}[{}]", path, i);
    if (!ids.emplace(veh.id, i).second) {
      errors.push_back(fmt::format("{}.id: duplicate vehicle id {}", at, veh.id));
    }
    if (veh.lane < 1 || veh.lane > params.m_lanes) {
      errors.push_back(fmt::format("{}.lane: {} outside 1..{}", at, veh.lane, params.m_lanes));
    }
    if (!std::isfinite(veh.x)) errors.push_back(at + ".x: must be finite");
    if (!(std::isfinite(veh.v) && veh.v >= 0.0)) errors.push_back(at + ".v: must be finite and >= 0");
    if (!(veh.timer >= 0.0 && veh.timer < t1)) {
      errors.push_back(fmt::format("{}.timer0: must lie in [0, {})", at, format_real(t1)));
    }
    if (veh.autonomous() != veh.control.has_value()) {
      errors.push_back(at + ".control: required for autonomous vehicles, forbidden for humans");
    }
    if (veh.control) {
      auto ce = veh.control->validation_errors(params, at + ".control");
      errors.insert(errors.end(), ce.begin(), ce.end());
    }
  }
  std::vector<std::size_t> order(vehicles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& va = vehicles[a];
    const auto& vb = vehicles[b];
    return std::tie(va.lane, va.x, a) < std::tie(vb.lane, vb.x, b);
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& a = vehicles[order[k - 1]];
    const auto& b = vehicles[order[k]];
    if (a.lane == b.lane && a.x == b.x) {
      errors.push_back(fmt::format("{}: vehicles {} and {} share lane {} and position {}", path,
                                   a.id, b.id, a.lane, format_real(a.x)));
    }
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(vehicles[a].timer, a) < std::tie(vehicles[b].timer, b);
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& a = vehicles[order[k - 1]];
    const auto& b = vehicles[order[k]];
    if (a.timer == b.timer) {
      errors.push_back(fmt::format("{}: vehicles {} and {} have equal initial timers {}", path,
                                   a.id, b.id, format_real(a.timer)));
    }
  }
  return errors;
}

void MicroState::validate() const {
  auto errors = validation_errors();
  if (!errors.empty()) throw ValidationError("invalid microscopic state", std::move(errors));
}

std::size_t MicroState::index_of(int id) const {
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    if (vehicles[i].id == id) return i;
  }
  throw ValidationError(fmt::format("unknown vehicle id {}", id));
}

std::pair<ParticleCloud, ParticleCloud> empirical_measures(const MicroState& state, int lane) {
  std::vector<Atom> mu, nu;
  for (const auto& veh : state.vehicles) {
    if (veh.lane != lane) continue;
    (veh.autonomous() ? nu : mu).push_back({veh.x, veh.v, 0.0});
  }
  for (auto& a : mu) a.mass = 1.0 / static_cast<double>(mu.size());
  for (auto& a : nu) a.mass = 1.0 / static_cast<double>(nu.size());
  return {ParticleCloud(std::move(mu)), ParticleCloud(std::move(nu))};
}

std::vector<MicroDerivative> rhs_micro(const MicroState& state, double t) {
  std::vector<double> xs, vs;
  for (const auto& veh : state.vehicles) {
    xs.push_back(veh.x);
    vs.push_back(veh.v);
  }
  const auto acc = accelerations(state.vehicles, xs, vs, controls_at(state.vehicles, t), state.params);
  std::vector<MicroDerivative> out(state.vehicles.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {state.vehicles[i].v, acc[i], 1.0};
  return out;
}

std::pair<double, int> next_event_time(const MicroState& state) {
  const double t1 = state.params.timer_limit();
  std::pair<double, int> best{kInf, -1};
  for (const auto& veh : state.vehicles) {
    const double te = state.time + (t1 - veh.timer);
    if (te < best.first || (te == best.first && veh.id < best.second)) best = {te, veh.id};
  }
  return best;
}

CandidateAccels candidate_accels(const MicroState& state, int id, int target_lane) {
  const auto& me = state.vehicle(id);
  const auto& p = state.params;
  if (std::abs(target_lane - me.lane) != 1 || target_lane < 1 || target_lane > p.m_lanes) {
    throw ValidationError(fmt::format("vehicle {} on lane {}: lane {} is not an adjacent lane", id,
                                      me.lane, target_lane));
  }
  const double u = me.control_at(state.time);
  CandidateAccels out;
  {
    const auto [mu, nu] = empirical_measures(state, me.lane);
    out.a_now = LaneField(mu, nu, p)(me.x, me.v) + u;
  }
  const auto [mu, nu] = empirical_measures(state, target_lane);
  out.a_bar_n = conv_accel(mu, nu, me.x, me.v, p) + u;

  const VehicleState* follower = nullptr;
  for (const auto& veh : state.vehicles) {
    if (veh.lane == target_lane && veh.x < me.x && (!follower || veh.x > follower->x)) follower = &veh;
  }
  if (!follower) {
    out.a_bar_l = kInf;
    return out;
  }
  auto inserted = [&](const ParticleCloud& cls) {
    const double w = 1.0 / static_cast<double>(cls.size() + 1);
    std::vector<Atom> atoms;
    for (const auto& a : cls.atoms()) atoms.push_back({a.x, a.v, w});
    atoms.push_back({me.x, me.v, w});
    return ParticleCloud(std::move(atoms));
  };
  if (me.autonomous()) {
    out.a_bar_l = conv_accel(mu, inserted(nu), follower->x, follower->v, p);
  } else {
    out.a_bar_l = conv_accel(inserted(mu), nu, follower->x, follower->v, p);
  }
  return out;
}

LaneDecision lane_change_decision(const MicroState& state, int id) {
  const auto& me = state.vehicle(id);
  const double delta = state.params.delta_lc;
  LaneDecision d{me.lane, false};
  double best_gain = -kInf;
  int qualified = 0;
  // Upper neighbor first so an exact tie keeps lane + 1.
  for (int target : {me.lane + 1, me.lane - 1}) {
    if (target < 1 || target > state.params.m_lanes) continue;
    const auto c = candidate_accels(state, id, target);
    const bool safe = c.a_bar_n >= -delta && c.a_bar_l >= -delta;
    const bool incentive = c.a_bar_n >= c.a_now + delta;
    if (!(safe && incentive)) continue;
    ++qualified;
    if (c.a_bar_n > best_gain) {
      best_gain = c.a_bar_n;
      d.target_lane = target;
    }
  }
  d.both_sides_qualified = qualified == 2;
  return d;
}

ApplyResult apply_event(const MicroState& state, int id, const LaneDecision& decision) {
  ApplyResult r{state, false, {}};
  auto& me = r.state.vehicles[r.state.index_of(id)];
  if (decision.target_lane != me.lane) {
    const bool occupied = std::any_of(r.state.vehicles.begin(), r.state.vehicles.end(),
                                      [&](const VehicleState& o) {
                                        return o.id != id && o.lane == decision.target_lane &&
                                               o.x == me.x;
                                      });
    if (occupied) {
      r.cancelled = true;
      r.warning = fmt::format("t={}: vehicle {} lane change {}->{} cancelled, landing position {} occupied",
                              format_real(state.time), id, me.lane, decision.target_lane,
                              format_real(me.x));
    } else {
      me.lane = decision.target_lane;
    }
  }
  me.timer = 0.0;
  require_exclusion(r.state);
  return r;
}

std::string TrajectoryLog::trajectory_csv() const {
  std::string out = "t,id,lane,x,v\n";
  for (std::size_t k = 0; k < times.size(); ++k) {
    const std::string t = format_real(times[k]);
    for (const auto& s : samples[k]) {
      out += fmt::format("{},{},{},{},{}\n", t, s.id, s.lane, format_real(s.x), format_real(s.v));
    }
  }
  return out;
}

std::string TrajectoryLog::events_csv() const {
  std::string out = "t,id,from,to\n";
  for (const auto& e : events) {
    out += fmt::format("{},{},{},{}\n", format_real(e.t), e.id, e.from, e.to);
  }
  return out;
}

TrajectoryLog simulate_sigma1(const MicroState& initial, const MicroRunOptions& options) {
  initial.validate();
  if (!(options.dt_max > 0.0) || (!(options.sample_dt > 0.0) && options.sample_times.empty())) {
    throw ValidationError("dt_max and sample_dt must be > 0");
  }
  const ModelParams& p = initial.params;
  const double t0 = initial.time;
  const double t_end = options.t_end.value_or(p.horizon_T);
  if (!(t_end >= t0)) throw ValidationError("t_end precedes the initial time");
  const double t1 = p.timer_limit();

  TrajectoryLog log;
  log.growth_constant = growth_constant(p, 2.0);
  log.initial_radius = state_radius(initial);

  MicroState s = initial;
  const std::size_t n = s.vehicles.size();
  // Expiry r of vehicle i sits at t0 - timer_i + r T1, computed directly so
  // event times carry no accumulated rounding.
  std::vector<double> expiry(n), origin(n);
  std::vector<long> fired(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    origin[i] = t0 - s.vehicles[i].timer;
    expiry[i] = origin[i] + t1;
  }

  auto record = [&](double t) {
    log.times.push_back(t);
    std::vector<VehicleSnapshot> snap;
    snap.reserve(n);
    for (const auto& veh : s.vehicles) snap.push_back({veh.id, veh.lane, veh.x, veh.v});
    log.samples.push_back(std::move(snap));
  };
  auto check_bound = [&](double t) {
    const double bound = a_priori_radius(log.initial_radius, log.growth_constant, t - t0);
    const double r = state_radius(s);
    if (r > bound * (1.0 + 1e-12)) {
      throw NumericalError(fmt::format("a-priori bound violated at t={}: |state|={} > {}",
                                       format_real(t), format_real(r), format_real(bound)));
    }
  };

  std::size_t sample_k = 0;
  std::vector<double> explicit_samples;
  for (double ts : options.sample_times) {
    if (!std::isfinite(ts)) throw ValidationError("sample times must be finite");
    if (ts > t0 && ts <= t_end) explicit_samples.push_back(ts);
  }
  std::sort(explicit_samples.begin(), explicit_samples.end());
  explicit_samples.erase(std::unique(explicit_samples.begin(), explicit_samples.end()), explicit_samples.end());
  // Sample k >= 1; index 0 is the initial state.
  auto sample_time = [&](std::size_t k) {
    if (!options.sample_times.empty()) {
      return k - 1 < explicit_samples.size() ? explicit_samples[k - 1] : std::numeric_limits<double>::infinity();
    }
    return t0 + static_cast<double>(k) * options.sample_dt;
  };
  record(t0);
  sample_k = 1;

  std::vector<double> x(n), v(n), kx[4], kv[4];
  for (auto& k : kx) k.resize(n);
  for (auto& k : kv) k.resize(n);
  std::vector<double> xs(n), vs(n);

  double t = t0;
  while (t < t_end) {
    double hard = t_end;
    std::size_t ev = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (expiry[i] < hard) {
        hard = expiry[i];
        ev = i;
      }
    }
    hard = std::min(hard, sample_time(sample_k));
    for (const auto& veh : s.vehicles) {
      if (veh.control) hard = std::min(hard, veh.control->next_breakpoint_after(t));
    }
    const double span = hard - t;
    const double steps = std::ceil(span / options.dt_max * (1.0 - 1e-12));
    const double t_next = steps <= 1.0 ? hard : t + span / steps;
    const double h = t_next - t;

    if (h > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = s.vehicles[i].x;
        v[i] = s.vehicles[i].v;
      }
      // Controls are constant on (t, t_next) because steps stop at breakpoints.
      const auto u = controls_at(s.vehicles, t + 0.5 * h);
      static constexpr double c[4] = {0.0, 0.5, 0.5, 1.0};
      for (int stage = 0; stage < 4; ++stage) {
        for (std::size_t i = 0; i < n; ++i) {
          xs[i] = stage == 0 ? x[i] : x[i] + c[stage] * h * kx[stage - 1][i];
          vs[i] = stage == 0 ? v[i] : v[i] + c[stage] * h * kv[stage - 1][i];
          kx[stage][i] = std::max(vs[i], 0.0);
        }
        kv[stage] = accelerations(s.vehicles, xs, vs, u, p);
      }
      for (std::size_t i = 0; i < n; ++i) {
        auto& veh = s.vehicles[i];
        veh.x = x[i] + h / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
        veh.v = std::max(0.0, v[i] + h / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]));
      }
    }
    t = t_next;
    s.time = t;
    for (std::size_t i = 0; i < n; ++i) s.vehicles[i].timer = std::max(0.0, t1 - (expiry[i] - t));
    require_finite(s);

    if (ev < n && t == expiry[ev]) {
      auto& veh = s.vehicles[ev];
      veh.timer = t1;
      const auto decision = lane_change_decision(s, veh.id);
      LaneChangeRecord rec{t, veh.id, veh.lane, veh.lane, veh.x, veh.v, 0.0, 0.0};
      auto applied = apply_event(s, veh.id, decision);
      if (decision.both_sides_qualified) {
        log.warnings.push_back(fmt::format("t={}: vehicle {} qualified for both neighbors, chose lane {}",
                                           format_real(t), veh.id, decision.target_lane));
      }
      if (applied.cancelled) log.warnings.push_back(applied.warning);
      s = std::move(applied.state);
      const auto& after = s.vehicles[ev];
      rec.to = after.lane;
      rec.x_after = after.x;
      rec.v_after = after.v;
      log.events.push_back(rec);
      ++fired[ev];
      expiry[ev] = origin[ev] + static_cast<double>(fired[ev] + 1) * t1;
    }
    if (t == sample_time(sample_k)) {
      require_exclusion(s);
      check_bound(t);
      record(t);
      ++sample_k;
    }
  }
  if (log.times.back() != t) {
    require_exclusion(s);
    check_bound(t);
    record(t);
  }
  log.final_state = s;
  return log;
}

}  // namespace simtraffic
