#include "simtraffic/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/kernels.hpp"

namespace simtraffic {

namespace {

std::vector<LaneField> lane_fields(const MeanFieldState& s) {
  std::vector<LaneField> fields(static_cast<std::size_t>(s.params.m_lanes) + 1);
  for (int j = 1; j <= s.params.m_lanes; ++j) fields[j] = LaneField(s.lane(j), s.av_measure(j), s.params);
  return fields;
}

// Projected field: a particle at rest never decelerates.
double floored_accel(const LaneField& f, double x, double v, double u) {
  const double vel = std::max(v, 0.0);
  const double a = f(x, vel) + u;
  return (vel <= 0.0 && a < 0.0) ? 0.0 : a;
}

// Classical RK4 for (x, v) under a frozen field plus constant control.
void rk4(const LaneField& f, double u, double h, double& x, double& v) {
  const double x0 = x, v0 = v;
  const double kx1 = std::max(v0, 0.0);
  const double kv1 = floored_accel(f, x0, v0, u);
  const double kx2 = std::max(v0 + 0.5 * h * kv1, 0.0);
  const double kv2 = floored_accel(f, x0 + 0.5 * h * kx1, v0 + 0.5 * h * kv1, u);
  const double kx3 = std::max(v0 + 0.5 * h * kv2, 0.0);
  const double kv3 = floored_accel(f, x0 + 0.5 * h * kx2, v0 + 0.5 * h * kv2, u);
  const double kx4 = std::max(v0 + h * kv3, 0.0);
  const double kv4 = floored_accel(f, x0 + h * kx3, v0 + h * kv3, u);
  x = x0 + h / 6.0 * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4);
  v = std::max(0.0, v0 + h / 6.0 * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4));
}

SourceTransfer source_with_fields(const MeanFieldState& s, int j, double dt,
                                  const std::vector<LaneField>& fields) {
  const auto& p = s.params;
  const auto& cloud = s.lane(j);
  SourceTransfer out;
  out.outflow.assign(cloud.size(), 0.0);
  const bool has_lower = j > 1;
  const bool has_upper = j < p.m_lanes;
  if (!has_lower && !has_upper) return out;
  std::vector<double> totals;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Atom& a = cloud[i];
    const double own = fields[j](a.x, a.v);
    double lower = 0.0, upper = 0.0;
    if (has_lower) lower = dt * lane_change_prob(fields[j - 1](a.x, a.v) - own - p.delta_lc, p) * a.mass;
    if (has_upper) upper = dt * lane_change_prob(fields[j + 1](a.x, a.v) - own - p.delta_lc, p) * a.mass;
    if (lower + upper > a.mass) {
      throw NumericalError(fmt::format("step {} too large: atom {} of lane {} would lose more than its mass",
                                       format_real(dt), i, j));
    }
    if (lower > 0.0) {
      out.to_lower.push_back({a.x, a.v, lower});
      out.lower_from.push_back(i);
    }
    if (upper > 0.0) {
      out.to_upper.push_back({a.x, a.v, upper});
      out.upper_from.push_back(i);
    }
    out.outflow[i] = lower + upper;
  }
  out.outflow_total = compensated_sum(out.outflow);
  return out;
}

std::vector<Atom> push_atoms(const ParticleCloud& cloud, const LaneField& f, double dt,
                             const std::vector<double>* outflow) {
  std::vector<Atom> atoms;
  atoms.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Atom a = cloud[i];
    rk4(f, 0.0, dt, a.x, a.v);
    // Retained mass: exact complement of what the source took.
    if (outflow) a.mass = cloud[i].mass - (*outflow)[i];
    atoms.push_back(a);
  }
  return atoms;
}


}  // namespace

std::vector<std::string> MeanFieldState::validation_errors(const std::string& path) const {
  std::vector<std::string> errors = params.validation_errors("params");
  if (!errors.empty()) return errors;
  if (lanes.size() != static_cast<std::size_t>(params.m_lanes)) {
    errors.push_back(fmt::format("{}.lanes: expected {} lane densities, got {}", path, params.m_lanes,
                                 lanes.size()));
  }
  const double t1 = params.timer_limit();
  std::map<int, std::size_t> ids;
  for (std::size_t i = 0; i < avs.size(); ++i) {
    const auto& a = avs[i];
    const std::string at = fmt::format("{}.avs[{}]", path, i);
    if (!ids.emplace(a.id, i).second) errors.push_back(fmt::format("{}.id: duplicate id {}", at, a.id));
    if (a.lane < 1 || a.lane > params.m_lanes) {
      errors.push_back(fmt::format("{}.lane: {} outside 1..{}", at, a.lane, params.m_lanes));
    }
    if (!std::isfinite(a.y)) errors.push_back(at + ".y: must be finite");
    if (!(std::isfinite(a.w) && a.w >= 0.0)) errors.push_back(at + ".w: must be finite and >= 0");
    if (!(a.timer >= 0.0 && a.timer < t1)) {
      errors.push_back(fmt::format("{}.timer0: must lie in [0, {})", at, format_real(t1)));
    }
    auto ce = a.control.validation_errors(params, at + ".control");
    errors.insert(errors.end(), ce.begin(), ce.end());
  }
  for (std::size_t i = 0; i < avs.size(); ++i) {
    for (std::size_t k = i + 1; k < avs.size(); ++k) {
      if (avs[i].timer == avs[k].timer) {
        errors.push_back(fmt::format("{}.avs: vehicles {} and {} have equal initial timers {}", path,
                                     avs[i].id, avs[k].id, format_real(avs[i].timer)));
      }
    }
  }
  return errors;
}

void MeanFieldState::validate() const {
  auto errors = validation_errors();
  if (!errors.empty()) throw ValidationError("invalid mean-field state", std::move(errors));
}

ParticleCloud MeanFieldState::av_measure(int lane) const {
  std::vector<Atom> atoms;
  for (const auto& a : avs) {
    if (a.lane == lane) atoms.push_back({a.y, a.w, 0.0});
  }
  for (auto& a : atoms) a.mass = 1.0 / static_cast<double>(atoms.size());
  return ParticleCloud(std::move(atoms));
}

double SchemeParams::dt(const ModelParams& p) const { return std::ldexp(p.horizon_T, -k_dyadic); }

std::vector<std::string> SchemeParams::validation_errors(const ModelParams& p,
                                                         const std::string& path) const {
  std::vector<std::string> errors;
  if (k_dyadic < 1 || k_dyadic > 40) errors.push_back(path + ".k_dyadic: must lie in 1..40");
  if (!(eps_mass >= 0.0 && eps_mass < 1.0)) errors.push_back(path + ".eps_mass: must lie in [0, 1)");
  if (!(grid_h >= 0.0 && std::isfinite(grid_h))) errors.push_back(path + ".grid_h: must be >= 0");
  if (!(dt_max > 0.0 && std::isfinite(dt_max))) errors.push_back(path + ".dt_max: must be > 0");
  if (merge_window < 1) errors.push_back(path + ".merge_window: must be >= 1");
  if (errors.empty() && dt(p) * 2.0 * p.p_max > 0.5) {
    errors.push_back(fmt::format("{}.k_dyadic: step {} violates dt * 2 * p_max <= 0.5", path,
                                 format_real(dt(p))));
  }
  return errors;
}

SourceTransfer source_term(const MeanFieldState& state, int lane, double dt) {
  return source_with_fields(state, lane, dt, lane_fields(state));
}

ParticleCloud flow_push(const MeanFieldState& state, int lane, double dt) {
  const LaneField f(state.lane(lane), state.av_measure(lane), state.params);
  return ParticleCloud(push_atoms(state.lane(lane), f, dt, nullptr));
}

namespace {

// Clone history carried across the steps of one run. Tags are parallel to the
// lane clouds and identify atoms across steps.
struct Lineage {
  struct Open {
    std::uint64_t tag;
    long opened;
  };
  std::vector<std::vector<std::uint64_t>> tags;  // [lane - 1][atom]
  std::map<std::pair<std::uint64_t, int>, Open> open;  // (donor tag, target lane)
  std::uint64_t next_tag = 0;
  long step = 0;

  explicit Lineage(const MeanFieldState& s) {
    for (const auto& c : s.lanes) {
      tags.emplace_back();
      for (std::size_t i = 0; i < c.size(); ++i) tags.back().push_back(next_tag++);
    }
  }
};

MeanFieldState step_impl(const MeanFieldState& state, const SchemeParams& scheme, double dt,
                         StepReport* report, Lineage* book) {
  const auto& p = state.params;
  const int m = p.m_lanes;
  const auto fields = lane_fields(state);
  const bool merging = book && scheme.merge_window > 1;

  std::vector<SourceTransfer> src;
  src.reserve(m);
  for (int j = 1; j <= m; ++j) src.push_back(source_with_fields(state, j, dt, fields));

  MeanFieldState next = state;
  StepReport rep;
  rep.t_start = state.time;
  rep.dt = dt;
  std::vector<double> clone_masses;
  std::vector<std::vector<std::uint64_t>> new_tags(m);
  for (int j = 1; j <= m; ++j) {
    auto atoms = push_atoms(state.lane(j), fields[j], dt, &src[j - 1].outflow);
    std::vector<std::uint64_t> tags = book ? book->tags[j - 1] : std::vector<std::uint64_t>{};
    std::vector<double> in_masses;
    std::map<std::uint64_t, std::size_t> where;
    if (merging) {
      for (std::size_t i = 0; i < tags.size(); ++i) where[tags[i]] = i;
    }
    auto deposit = [&](const std::vector<Atom>& clones, const std::vector<std::size_t>& from, int donor) {
      for (std::size_t c = 0; c < clones.size(); ++c) {
        const Atom& a = clones[c];
        in_masses.push_back(a.mass);
        rep.source_radius = std::max(rep.source_radius, std::hypot(a.x, a.v));
        if (!book) {
          atoms.push_back(a);
          continue;
        }
        const auto key = std::make_pair(book->tags[donor - 1][from[c]], j);
        if (merging) {
          auto it = book->open.find(key);
          if (it != book->open.end() && book->step - it->second.opened < scheme.merge_window) {
            auto w = where.find(it->second.tag);
            if (w != where.end()) {
              Atom& host = atoms[w->second];
              const double total = host.mass + a.mass;
              host.x = (host.mass * host.x + a.mass * a.x) / total;
              host.v = std::max(0.0, (host.mass * host.v + a.mass * a.v) / total);
              host.mass = total;
              continue;
            }
          }
        }
        const std::uint64_t tag = book->next_tag++;
        where[tag] = atoms.size();
        atoms.push_back(a);
        tags.push_back(tag);
        if (merging) book->open[key] = {tag, book->step};
      }
    };
    if (j > 1) deposit(src[j - 2].to_upper, src[j - 2].upper_from, j - 1);
    if (j < m) deposit(src[j].to_lower, src[j].lower_from, j + 1);
    const double in = compensated_sum(in_masses);
    clone_masses.push_back(in);
    ParticleCloud merged(std::move(atoms));
    ParticleCloud pruned = prune_merge(merged, scheme.eps_mass, scheme.grid_h);
    if (book) {
      if (scheme.grid_h > 0.0) {
        // Grid merging relabels atoms; restart the history for this lane.
        tags.clear();
        for (std::size_t i = 0; i < pruned.size(); ++i) tags.push_back(book->next_tag++);
      } else if (pruned.size() != merged.size()) {
        // Same rule as prune_merge without merging.
        const double threshold = scheme.eps_mass * merged.total_mass() / static_cast<double>(merged.size());
        std::vector<std::uint64_t> kept;
        for (std::size_t i = 0; i < merged.size(); ++i) {
          if (!(merged[i].mass < threshold)) kept.push_back(tags[i]);
        }
        tags = std::move(kept);
      }
      new_tags[j - 1] = std::move(tags);
    }
    rep.lanes.push_back({j, state.lane(j).total_mass(), src[j - 1].outflow_total, in,
                         merged.total_mass(), merged.total_mass() - pruned.total_mass()});
    rep.atoms += pruned.size();
    next.lanes[j - 1] = std::move(pruned);
  }
  rep.source_mass = compensated_sum(clone_masses);
  if (book) {
    book->tags = std::move(new_tags);
    ++book->step;
  }

  for (auto& av : next.avs) {
    const LaneField& f = fields[av.lane];
    double t = state.time;
    const double t_stop = state.time + dt;
    while (t < t_stop) {
      const double hard = std::min(t_stop, av.control.next_breakpoint_after(t));
      const double steps = std::ceil((hard - t) / scheme.dt_max * (1.0 - 1e-12));
      const double tn = steps <= 1.0 ? hard : t + (hard - t) / steps;
      rk4(f, av.control.value_at(0.5 * (t + tn)), tn - t, av.y, av.w);
      t = tn;
    }
    av.timer += dt;
  }
  next.time = state.time + dt;
  if (report) *report = std::move(rep);
  return next;
}

}  // namespace

MeanFieldState lagrangian_step(const MeanFieldState& state, const SchemeParams& scheme,
                               std::optional<double> dt, StepReport* report) {
  return step_impl(state, scheme, dt.value_or(scheme.dt(state.params)), report, nullptr);
}

int av_lane_change(const MeanFieldState& state, int id) {
  const auto it = std::find_if(state.avs.begin(), state.avs.end(), [&](const AvState& a) { return a.id == id; });
  if (it == state.avs.end()) throw ValidationError(fmt::format("unknown autonomous vehicle id {}", id));
  const auto& p = state.params;
  const auto fields = lane_fields(state);
  const double own = fields[it->lane](it->y, it->w) + it->control.value_at(state.time);
  int target = it->lane;
  double best = -std::numeric_limits<double>::infinity();
  for (int l : {it->lane + 1, it->lane - 1}) {
    if (l < 1 || l > p.m_lanes) continue;
    const double a = fields[l](it->y, it->w);
    if (a >= own + p.delta_lc && a > best) {
      best = a;
      target = l;
    }
  }
  return target;
}

std::string MeanFieldTrajectory::avs_csv() const {
  std::string out = "t,id,lane,y,w\n";
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (const auto& a : avs[k]) {
      out += fmt::format("{},{},{},{},{}\n", format_real(times[k]), a.id, a.lane, format_real(a.y),
                         format_real(a.w));
    }
  }
  return out;
}

std::string MeanFieldTrajectory::mass_balance_csv() const {
  std::string out = "step,t,lane,mass_before,outflow,inflow,mass_after,pruned\n";
  for (std::size_t n = 0; n < steps.size(); ++n) {
    for (const auto& b : steps[n].lanes) {
      out += fmt::format("{},{},{},{},{},{},{},{}\n", n, format_real(steps[n].t_start), b.lane,
                         format_real(b.mass_before), format_real(b.outflow), format_real(b.inflow),
                         format_real(b.mass_after), format_real(b.pruned));
    }
  }
  return out;
}

std::string MeanFieldTrajectory::events_csv() const {
  std::string out = "t,id,from,to\n";
  for (const auto& e : events) out += fmt::format("{},{},{},{}\n", format_real(e.t), e.id, e.from, e.to);
  return out;
}

MeanFieldTrajectory simulate_sigma2(const MeanFieldState& initial, const SchemeParams& scheme,
                                    const MeanFieldRunOptions& options) {
  initial.validate();
  {
    auto errors = scheme.validation_errors(initial.params);
    if (!errors.empty()) throw ValidationError("invalid scheme parameters", std::move(errors));
  }
  if (options.sample_dt < 0.0) throw ValidationError("sample_dt must be >= 0");
  const auto& p = initial.params;
  const int m = p.m_lanes;
  const double t0 = initial.time;
  const double t_end = options.t_end.value_or(p.horizon_T);
  if (!(t_end >= t0)) throw ValidationError("t_end precedes the initial time");
  const double dt = scheme.dt(p);
  const double t1 = p.timer_limit();
  const double neighbors = std::min(2, m - 1);

  MeanFieldTrajectory log;
  double total0 = 0.0;
  double r0 = 0.0;
  for (const auto& c : initial.lanes) {
    total0 += c.total_mass();
    r0 = std::max(r0, c.support_radius());
  }
  for (const auto& a : initial.avs) r0 = std::max(r0, std::hypot(a.y, a.w));
  log.growth_constant = growth_constant(p, total0 + 1.0);
  log.initial_radius = r0;

  MeanFieldState s = initial;
  const std::size_t n_av = s.avs.size();
  std::vector<double> origin(n_av), expiry(n_av);
  std::vector<long> fired(n_av, 0);
  for (std::size_t i = 0; i < n_av; ++i) {
    origin[i] = t0 - s.avs[i].timer;
    expiry[i] = origin[i] + t1;
  }

  auto record = [&] {
    log.times.push_back(s.time);
    log.lanes.push_back(s.lanes);
    std::vector<AvSnapshot> snap;
    for (const auto& a : s.avs) snap.push_back({a.id, a.lane, a.y, a.w});
    log.avs.push_back(std::move(snap));
  };
  record();

  Lineage book(s);
  long grid_n = 0;
  std::size_t sample_k = 1;
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
    return options.sample_dt > 0.0 ? t0 + static_cast<double>(k) * options.sample_dt : std::numeric_limits<double>::infinity();
  };
  double pruned_total = 0.0;
  double t = t0;
  while (t < t_end) {
    double hard = std::min(t_end, t0 + static_cast<double>(grid_n + 1) * dt);
    std::size_t ev = n_av;
    for (std::size_t i = 0; i < n_av; ++i) {
      if (expiry[i] < hard) {
        hard = expiry[i];
        ev = i;
      }
    }
    hard = std::min(hard, sample_time(sample_k));
    const double h = hard - t;

    double support_start = 0.0;
    for (const auto& c : s.lanes) support_start = std::max(support_start, c.support_radius());

    StepReport rep;
    s = step_impl(s, scheme, h, &rep, &book);
    s.time = hard;
    t = hard;
    if (t == t0 + static_cast<double>(grid_n + 1) * dt) ++grid_n;
    for (std::size_t i = 0; i < n_av; ++i) s.avs[i].timer = std::max(0.0, t1 - (expiry[i] - t));

    // Conservation before pruning, lane by lane and in total.
    double before = 0.0, after = 0.0, pruned = 0.0;
    for (const auto& b : rep.lanes) {
      const double expect = b.mass_before - b.outflow + b.inflow;
      if (std::abs(b.mass_after - expect) > 1e-12 * std::max(1.0, b.mass_before)) {
        throw NumericalError(fmt::format("t={}: lane {} mass balance off by {}", format_real(t), b.lane,
                                         format_real(b.mass_after - expect)));
      }
      before += b.mass_before;
      after += b.mass_after;
      pruned += b.pruned;
    }
    if (std::abs(after - before) > 1e-12 * before) {
      throw NumericalError(fmt::format("t={}: total mass drift {}", format_real(t), format_real(after - before)));
    }
    pruned_total += pruned;
    if (pruned > scheme.eps_mass * before * m * (1.0 + 1e-9)) {
      throw NumericalError(fmt::format("t={}: pruning removed {} mass", format_real(t), format_real(pruned)));
    }
    // Source bounds: mass and support.
    if (rep.source_mass > neighbors * p.p_max * h * before * (1.0 + 1e-12)) {
      throw NumericalError(fmt::format("t={}: source mass {} exceeds its bound", format_real(t),
                                       format_real(rep.source_mass)));
    }
    // Clones sit at step-start atom positions, inside the step-start support.
    if (rep.source_radius > support_start) {
      throw NumericalError(fmt::format("t={}: source support {} leaves the lane supports {}", format_real(t),
                                       format_real(rep.source_radius), format_real(support_start)));
    }
    const double bound = a_priori_radius(r0, log.growth_constant, t - t0);
    double radius = 0.0;
    for (const auto& c : s.lanes) radius = std::max(radius, c.support_radius());
    for (const auto& a : s.avs) radius = std::max(radius, std::hypot(a.y, a.w));
    if (!std::isfinite(radius) || radius > bound * (1.0 + 1e-12)) {
      throw NumericalError(fmt::format("t={}: support radius {} exceeds a-priori bound {}", format_real(t),
                                       format_real(radius), format_real(bound)));
    }
    rep.atoms = 0;
    for (const auto& c : s.lanes) rep.atoms += c.size();
    log.steps.push_back(std::move(rep));

    if (ev < n_av && t == expiry[ev]) {
      auto& av = s.avs[ev];
      const int to = av_lane_change(s, av.id);
      log.events.push_back({t, av.id, av.lane, to});
      av.lane = to;
      av.timer = 0.0;
      ++fired[ev];
      expiry[ev] = origin[ev] + static_cast<double>(fired[ev] + 1) * t1;
    }
    if (t == sample_time(sample_k)) {
      record();
      ++sample_k;
    }
  }
  if (log.times.back() != t) record();
  log.final_state = s;
  return log;
}

}  // namespace simtraffic
