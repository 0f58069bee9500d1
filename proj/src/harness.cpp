#include "simtraffic/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/transport.hpp"

namespace simtraffic {

unsigned harness_threads() {
  if (const char* env = std::getenv("SIMTRAFFIC_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(harness_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double x_norm(const std::vector<std::pair<double, double>>& avs1,
              const std::vector<std::pair<double, double>>& avs2, const ParticleCloud& mu1,
              const ParticleCloud& mu2, double gw_a, double gw_b) {
  if (avs1.size() != avs2.size()) {
    throw ValidationError(fmt::format("x_norm: AV counts differ ({} vs {})", avs1.size(), avs2.size()));
  }
  double av_part = 0.0;
  if (!avs1.empty()) {
    std::vector<double> terms;
    for (std::size_t k = 0; k < avs1.size(); ++k) {
      terms.push_back(std::abs(avs1[k].first - avs2[k].first) + std::abs(avs1[k].second - avs2[k].second));
    }
    av_part = compensated_sum(terms) / static_cast<double>(avs1.size());
  }
  double measure_part = 0.0;
  if (!(mu1.empty() && mu2.empty())) measure_part = gw11(mu1, mu2, gw_a, gw_b).distance;
  return av_part + measure_part;
}

namespace {

std::vector<std::pair<double, double>> lane_avs(const std::vector<AvSnapshot>& avs, int lane) {
  std::vector<const AvSnapshot*> on;
  for (const auto& a : avs) {
    if (a.lane == lane) on.push_back(&a);
  }
  std::sort(on.begin(), on.end(), [](const AvSnapshot* a, const AvSnapshot* b) { return a->id < b->id; });
  std::vector<std::pair<double, double>> out;
  for (const auto* a : on) out.emplace_back(a->y, a->w);
  return out;
}

std::vector<AvSnapshot> snapshots(const MeanFieldState& s) {
  std::vector<AvSnapshot> out;
  for (const auto& a : s.avs) out.push_back({a.id, a.lane, a.y, a.w});
  return out;
}

double deviation(const std::vector<ParticleCloud>& lanes1, const std::vector<AvSnapshot>& avs1,
                 const std::vector<ParticleCloud>& lanes2, const std::vector<AvSnapshot>& avs2,
                 const ModelParams& p) {
  double total = 0.0;
  for (int j = 1; j <= p.m_lanes; ++j) {
    total += x_norm(lane_avs(avs1, j), lane_avs(avs2, j), lanes1[j - 1], lanes2[j - 1], p.gw_a, p.gw_b);
  }
  return total;
}

std::size_t sample_index(const std::vector<double>& times, double t) {
  const auto it = std::find(times.begin(), times.end(), t);
  if (it == times.end()) throw NumericalError(fmt::format("no sample recorded at t={}", format_real(t)));
  return static_cast<std::size_t>(it - times.begin());
}

void check_times(const std::vector<double>& times, double t0, double horizon) {
  if (times.empty()) throw ValidationError("at least one sample time is required");
  for (double t : times) {
    if (!(t >= t0 && t <= horizon)) {
      throw ValidationError(fmt::format("sample time {} outside [{}, {}]", format_real(t), format_real(t0),
                                        format_real(horizon)));
    }
  }
}

}  // namespace

double x_norm_total(const MeanFieldState& a, const MeanFieldState& b) {
  return deviation(a.lanes, snapshots(a), b.lanes, snapshots(b), a.params);
}

MicroState convergence_micro_state(const ConvergenceScenario& sc, std::size_t n) {
  MicroState s;
  s.params = sc.params;
  const double t1 = sc.params.timer_limit();
  const std::size_t humans = n * sc.densities.size();
  std::vector<double> taken;
  for (const auto& a : sc.avs) taken.push_back(a.timer);
  int id = 1;
  for (const auto& a : sc.avs) id = std::max(id, a.id + 1);
  std::size_t g = 0;
  for (std::size_t j = 0; j < sc.densities.size(); ++j) {
    const auto cloud = discretize(sc.densities[j], n, sc.seed);
    for (const auto& atom : cloud.atoms()) {
      VehicleState v;
      v.id = id++;
      v.cls = VehicleClass::Human;
      v.lane = static_cast<int>(j) + 1;
      v.x = atom.x;
      v.v = atom.v;
      // Evenly spread, pairwise distinct timers that avoid the AV timers.
      double tau = t1 * (static_cast<double>(g++) + 0.5) / static_cast<double>(humans);
      while (std::find(taken.begin(), taken.end(), tau) != taken.end()) tau = std::nextafter(tau, 0.0);
      v.timer = tau;
      s.vehicles.push_back(std::move(v));
    }
  }
  for (const auto& a : sc.avs) {
    VehicleState v;
    v.id = a.id;
    v.cls = VehicleClass::Autonomous;
    v.lane = a.lane;
    v.x = a.y;
    v.v = a.w;
    v.timer = a.timer;
    v.control = a.control;
    s.vehicles.push_back(std::move(v));
  }
  return s;
}

MeanFieldState convergence_meanfield_state(const ConvergenceScenario& sc) {
  MeanFieldState s;
  s.params = sc.params;
  for (const auto& d : sc.densities) s.lanes.push_back(discretize(d, sc.reference_atoms, sc.seed));
  s.avs = sc.avs;
  return s;
}

double ConvergenceReport::fraction_monotone() const {
  if (cells.empty()) return 0.0;
  const auto good = std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.second; });
  return static_cast<double>(good) / static_cast<double>(cells.size());
}

std::string ConvergenceReport::csv() const {
  std::string out = "t,lane,N,distance\n";
  for (const auto& r : rows) out += fmt::format("{},{},{},{}\n", format_real(r.t), r.lane, r.n, format_real(r.distance));
  return out;
}

ConvergenceReport convergence_experiment(const ConvergenceScenario& sc, std::vector<std::size_t> ns,
                                         std::vector<double> times, double slack) {
  if (sc.densities.size() != static_cast<std::size_t>(sc.params.m_lanes)) {
    throw ValidationError("convergence: one density per lane is required");
  }
  if (ns.size() < 2) throw ValidationError("convergence: at least two values of N are required");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] == 0 || (i > 0 && ns[i] <= ns[i - 1])) {
      throw ValidationError("convergence: N values must be positive and strictly increasing");
    }
  }
  std::sort(times.begin(), times.end());
  check_times(times, 0.0, sc.params.horizon_T);
  const double t_end = times.back();
  const int m = sc.params.m_lanes;

  // Task 0: the mean-field reference; task i: the micro run with ns[i - 1].
  MeanFieldTrajectory reference;
  std::vector<TrajectoryLog> micro(ns.size());
  std::vector<MicroState> initial(ns.size());
  parallel_for(ns.size() + 1, [&](std::size_t task) {
    if (task == 0) {
      MeanFieldRunOptions o;
      o.sample_times = times;
      o.t_end = t_end;
      reference = simulate_sigma2(convergence_meanfield_state(sc), sc.scheme, o);
      return;
    }
    const std::size_t i = task - 1;
    initial[i] = convergence_micro_state(sc, ns[i]);
    MicroRunOptions o;
    o.dt_max = sc.micro_dt_max;
    o.sample_times = times;
    o.t_end = t_end;
    micro[i] = simulate_sigma1(initial[i], o);
  });

  ConvergenceReport rep;
  rep.ns = ns;
  rep.times = times;
  rep.slack = slack;
  for (double t : times) {
    const std::size_t ref_k = sample_index(reference.times, t);
    for (int j = 1; j <= m; ++j) {
      std::vector<double> ds;
      for (std::size_t i = 0; i < ns.size(); ++i) {
        // Each human keeps the weight of the lane it started on.
        std::map<int, double> weight;
        for (const auto& v : initial[i].vehicles) {
          if (!v.autonomous()) weight[v.id] = sc.densities[v.lane - 1].mass / static_cast<double>(ns[i]);
        }
        const std::size_t k = sample_index(micro[i].times, t);
        std::vector<Atom> atoms;
        for (const auto& snap : micro[i].samples[k]) {
          auto w = weight.find(snap.id);
          if (snap.lane == j && w != weight.end()) atoms.push_back({snap.x, snap.v, w->second});
        }
        const ParticleCloud human(std::move(atoms));
        const auto& lane = reference.lanes[ref_k][j - 1];
        const double d = (human.empty() && lane.empty())
                             ? 0.0
                             : gw11(human, lane, sc.params.gw_a, sc.params.gw_b).distance;
        rep.rows.push_back({ns[i], t, j, d});
        ds.push_back(d);
      }
      bool monotone = true;
      for (std::size_t i = 1; i < ds.size(); ++i) {
        if (ds[i] > (1.0 + slack) * ds[i - 1]) monotone = false;
      }
      rep.cells.push_back({{t, j}, monotone});
    }
  }
  return rep;
}

MeanFieldState perturbed(const MeanFieldState& s, double delta) {
  MeanFieldState out = s;
  for (auto& a : out.avs) {
    a.y += delta;
    a.w += delta;
  }
  for (auto& c : out.lanes) {
    c = push_forward(c, [delta](const Atom& a) { return Atom{a.x + delta, a.v, a.mass}; });
  }
  return out;
}

std::string StabilityReport::csv() const {
  std::string out = "delta,t,deviation,ratio\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{}\n", format_real(r.delta), format_real(r.t), format_real(r.deviation),
                       format_real(r.ratio));
  }
  return out;
}

StabilityReport stability_experiment(const MeanFieldState& initial, const SchemeParams& scheme,
                                     std::vector<double> deltas, std::vector<double> times,
                                     double tolerance) {
  if (deltas.empty()) throw ValidationError("stability: at least one delta is required");
  std::sort(deltas.begin(), deltas.end(), std::greater<>());
  for (double d : deltas) {
    if (!(d > 0.0)) throw ValidationError("stability: deltas must be positive");
  }
  std::sort(times.begin(), times.end());
  check_times(times, initial.time, initial.params.horizon_T);

  std::vector<MeanFieldTrajectory> runs(deltas.size() + 1);
  parallel_for(runs.size(), [&](std::size_t i) {
    MeanFieldRunOptions o;
    o.sample_times = times;
    o.t_end = times.back();
    runs[i] = simulate_sigma2(i == 0 ? initial : perturbed(initial, deltas[i - 1]), scheme, o);
  });

  StabilityReport rep;
  rep.deltas = deltas;
  rep.times = times;
  rep.tolerance = tolerance;
  const auto& p = initial.params;
  std::vector<double> dev0(deltas.size());
  std::vector<double> peak(deltas.size(), 0.0);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    dev0[i] = deviation(runs[0].lanes[0], runs[0].avs[0], runs[i + 1].lanes[0], runs[i + 1].avs[0], p);
  }
  rep.consistent = true;
  for (double t : times) {
    const std::size_t k0 = sample_index(runs[0].times, t);
    std::vector<double> ratios;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      const std::size_t k = sample_index(runs[i + 1].times, t);
      const double d = deviation(runs[0].lanes[k0], runs[0].avs[k0], runs[i + 1].lanes[k], runs[i + 1].avs[k], p);
      rep.rows.push_back({deltas[i], t, d, d / deltas[i]});
      ratios.push_back(d / deltas[i]);
      peak[i] = std::max(peak[i], d);
    }
    for (std::size_t a = 0; a < ratios.size(); ++a) {
      for (std::size_t b = a + 1; b < ratios.size(); ++b) {
        if (std::abs(ratios[a] - ratios[b]) > tolerance * std::max(ratios[a], ratios[b])) rep.consistent = false;
      }
    }
  }
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    rep.amplification.push_back(dev0[i] > 0.0 ? peak[i] / dev0[i] : 0.0);
  }
  return rep;
}

std::string SchemeOrderReport::csv() const {
  std::string out = "k,k_next,lane,gap\n";
  for (const auto& r : rows) out += fmt::format("{},{},{},{}\n", r.k, r.k_next, r.lane, format_real(r.gap));
  return out;
}

SchemeOrderReport scheme_convergence(const MeanFieldState& initial, const SchemeParams& scheme,
                                     std::vector<int> ks) {
  if (ks.size() < 2) throw ValidationError("scheme-order: at least two values of k are required");
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (ks[i] < ks[i - 1]) throw ValidationError("scheme-order: k values must be nondecreasing");
  }
  std::vector<MeanFieldState> finals(ks.size());
  parallel_for(ks.size(), [&](std::size_t i) {
    SchemeParams sp = scheme;
    sp.k_dyadic = ks[i];
    finals[i] = simulate_sigma2(initial, sp).final_state;
  });
  SchemeOrderReport rep;
  rep.ks = ks;
  const auto& p = initial.params;
  for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
    double total = 0.0;
    for (int j = 1; j <= p.m_lanes; ++j) {
      const auto& a = finals[i].lane(j);
      const auto& b = finals[i + 1].lane(j);
      const double gap = (a.empty() && b.empty()) ? 0.0 : gw11(a, b, p.gw_a, p.gw_b).distance;
      rep.rows.push_back({ks[i], ks[i + 1], j, gap});
      total += gap;
    }
    rep.totals.push_back(total);
  }
  rep.first_order = rep.totals.size() >= 2;
  for (std::size_t i = 0; i + 1 < rep.totals.size(); ++i) {
    const double r = rep.totals[i] / rep.totals[i + 1];
    rep.ratios.push_back(r);
    if (!(r >= rep.ratio_min && r <= rep.ratio_max)) rep.first_order = false;
  }
  return rep;
}

namespace {

double bump(double z) {
  if (!(std::abs(z) < 1.0)) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - z * z));
}

double bump_derivative(double z) {
  if (!(std::abs(z) < 1.0)) return 0.0;
  const double s = 1.0 - z * z;
  return bump(z) * (-2.0 * z / (s * s));
}

}  // namespace

double TestFunction::operator()(double x, double v) const {
  return bump((x - cx) / rx) * bump((v - cv) / rv);
}

std::pair<double, double> TestFunction::gradient(double x, double v) const {
  const double zx = (x - cx) / rx;
  const double zv = (v - cv) / rv;
  return {bump_derivative(zx) / rx * bump(zv), bump(zx) * bump_derivative(zv) / rv};
}

double weak_form_residual(const MeanFieldState& state, int lane, const TestFunction& phi, double dt,
                          const SchemeParams& scheme) {
  const auto& p = state.params;
  const auto next = lagrangian_step(state, scheme, dt);
  auto pairing = [&](const ParticleCloud& c) {
    std::vector<double> terms;
    for (const auto& a : c.atoms()) terms.push_back(a.mass * phi(a.x, a.v));
    return compensated_sum(terms);
  };
  const double lhs = (pairing(next.lane(lane)) - pairing(state.lane(lane))) / dt;

  // <phi, S>: clones arriving from the neighbors minus mass leaving this lane.
  std::vector<double> source;
  const auto own = source_term(state, lane, dt);
  for (std::size_t i = 0; i < own.outflow.size(); ++i) {
    const auto& a = state.lane(lane)[i];
    source.push_back(-own.outflow[i] * phi(a.x, a.v));
  }
  if (lane > 1) {
    for (const auto& a : source_term(state, lane - 1, dt).to_upper) source.push_back(a.mass * phi(a.x, a.v));
  }
  if (lane < p.m_lanes) {
    for (const auto& a : source_term(state, lane + 1, dt).to_lower) source.push_back(a.mass * phi(a.x, a.v));
  }
  const double s_term = compensated_sum(source) / dt;

  const LaneField field(state.lane(lane), state.av_measure(lane), p);
  std::vector<double> transport;
  for (const auto& a : state.lane(lane).atoms()) {
    const auto [gx, gv] = phi.gradient(a.x, a.v);
    if (gx == 0.0 && gv == 0.0) continue;
    double acc = field(a.x, a.v);
    if (a.v <= 0.0 && acc < 0.0) acc = 0.0;
    transport.push_back(a.mass * (gx * a.v + gv * acc));
  }
  return lhs - s_term - compensated_sum(transport);
}

}  // namespace simtraffic
