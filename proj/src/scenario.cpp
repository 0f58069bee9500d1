#include "simtraffic/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/transport.hpp"

namespace simtraffic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Field access on one JSON object; records every problem with its path and
// reports unrecognized keys on finish().
class Fields {
 public:
  Fields(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back(label() + "expected an object");
      ok_ = false;
    }
  }

  bool ok() const { return ok_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key, bool required) {
    known_.insert(key);
    if (!ok_) return nullptr;
    auto it = j_.find(key);
    if (it == j_.end()) {
      if (required) errors_.push_back(at(key) + ": missing");
      return nullptr;
    }
    return &*it;
  }

  double number(const std::string& key, double fallback, bool required = true) {
    const json* v = find(key, required);
    if (!v) return fallback;
    if (!v->is_number()) {
      errors_.push_back(at(key) + ": expected a number");
      return fallback;
    }
    return v->get<double>();
  }

  long long integer(const std::string& key, long long fallback, bool required = true) {
    const json* v = find(key, required);
    if (!v) return fallback;
    if (!v->is_number_integer()) {
      errors_.push_back(at(key) + ": expected an integer");
      return fallback;
    }
    return v->get<long long>();
  }

  std::uint64_t unsigned_integer(const std::string& key, bool required = true) {
    const json* v = find(key, required);
    if (!v) return 0;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<long long>() < 0)) {
      errors_.push_back(at(key) + ": expected a nonnegative integer");
      return 0;
    }
    return v->get<std::uint64_t>();
  }

  std::string string(const std::string& key, bool required = true) {
    const json* v = find(key, required);
    if (!v) return {};
    if (!v->is_string()) {
      errors_.push_back(at(key) + ": expected a string");
      return {};
    }
    return v->get<std::string>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key, false);
    if (!v) return fallback;
    if (!v->is_boolean()) {
      errors_.push_back(at(key) + ": expected true or false");
      return fallback;
    }
    return v->get<bool>();
  }

  std::vector<double> numbers(const std::string& key, bool required = true) {
    const json* v = find(key, required);
    std::vector<double> out;
    if (!v) return out;
    if (!v->is_array()) {
      errors_.push_back(at(key) + ": expected an array of numbers");
      return out;
    }
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) {
        errors_.push_back(fmt::format("{}[{}]: expected a number", at(key), i));
        continue;
      }
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::vector<long long> integers(const std::string& key, bool required = true) {
    const json* v = find(key, required);
    std::vector<long long> out;
    if (!v) return out;
    if (!v->is_array()) {
      errors_.push_back(at(key) + ": expected an array of integers");
      return out;
    }
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number_integer()) {
        errors_.push_back(fmt::format("{}[{}]: expected an integer", at(key), i));
        continue;
      }
      out.push_back((*v)[i].get<long long>());
    }
    return out;
  }

  const json* array(const std::string& key, bool required = true) {
    const json* v = find(key, required);
    if (v && !v->is_array()) {
      errors_.push_back(at(key) + ": expected an array");
      return nullptr;
    }
    return v;
  }

  void finish() const {
    if (!ok_) return;
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) errors_.push_back(at(key) + ": unknown field");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "scenario: " : path_ + ": "; }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
  bool ok_ = true;
};

std::string resolve(const std::string& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base_dir) / path).lexically_normal().string();
}

ControlSchedule read_control(const json* j, std::vector<std::string>& errors, const std::string& path) {
  if (!j) return {};
  return control_from_json(*j, errors, path);
}

std::vector<VehicleState> read_vehicles(const json* arr, std::vector<std::string>& errors) {
  std::vector<VehicleState> out;
  if (!arr) return out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    Fields f((*arr)[i], fmt::format("vehicles[{}]", i), errors);
    VehicleState v;
    v.id = static_cast<int>(f.integer("id", 0));
    const std::string cls = f.string("class");
    if (cls == "human") {
      v.cls = VehicleClass::Human;
    } else if (cls == "autonomous") {
      v.cls = VehicleClass::Autonomous;
    } else if (f.ok() && !cls.empty()) {
      errors.push_back(f.at("class") + ": expected \"human\" or \"autonomous\"");
    }
    v.lane = static_cast<int>(f.integer("lane", 1));
    v.x = f.number("x", 0.0);
    v.v = f.number("v", 0.0);
    v.timer = f.number("timer0", 0.0);
    if (const json* c = f.find("control", false)) v.control = control_from_json(*c, errors, f.at("control"));
    f.finish();
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AvState> read_avs(const json* arr, std::vector<std::string>& errors) {
  std::vector<AvState> out;
  if (!arr) return out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    Fields f((*arr)[i], fmt::format("avs[{}]", i), errors);
    AvState a;
    a.id = static_cast<int>(f.integer("id", 0));
    a.lane = static_cast<int>(f.integer("lane", 1));
    a.y = f.number("y", 0.0);
    a.w = f.number("w", 0.0);
    a.timer = f.number("timer0", 0.0);
    a.control = read_control(f.find("control", true), errors, f.at("control"));
    f.finish();
    out.push_back(std::move(a));
  }
  return out;
}

SchemeParams read_scheme(const json* j, bool need_k, std::vector<std::string>& errors) {
  SchemeParams s;
  if (!j) return s;
  Fields f(*j, "scheme", errors);
  s.k_dyadic = static_cast<int>(f.integer("k_dyadic", s.k_dyadic, need_k));
  s.eps_mass = f.number("eps_mass", s.eps_mass, false);
  s.grid_h = f.number("grid_h", s.grid_h, false);
  s.dt_max = f.number("dt_max", s.dt_max, false);
  s.merge_window = static_cast<int>(f.integer("merge_window", s.merge_window, false));
  f.finish();
  return s;
}

std::vector<ParticleCloud> read_lanes(const json* arr, std::uint64_t seed, const std::string& base_dir,
                                      std::vector<std::string>& errors) {
  std::vector<ParticleCloud> out;
  if (!arr) return out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    Fields f((*arr)[i], fmt::format("lanes[{}]", i), errors);
    const json* density = f.find("density", false);
    const json* cloud = f.find("cloud", false);
    const json* atoms = f.find("atoms", false);
    if (!f.ok()) {
      out.emplace_back();
      continue;
    }
    if ((density != nullptr) == (cloud != nullptr)) {
      errors.push_back(f.at("density") + ": exactly one of density or cloud is required");
    } else if (density) {
      const std::size_t before = errors.size();
      const DensitySpec d = density_from_json(*density, errors, f.at("density"));
      long long n = 0;
      if (!atoms || !atoms->is_number_integer() || (n = atoms->get<long long>()) < 1) {
        errors.push_back(f.at("atoms") + ": positive integer required with a density");
      } else if (errors.size() == before) {
        out.push_back(discretize(d, static_cast<std::size_t>(n), seed + i));
        f.finish();
        continue;
      }
    } else {
      if (atoms) errors.push_back(f.at("atoms") + ": only allowed with a density");
      if (!cloud->is_string()) {
        errors.push_back(f.at("cloud") + ": expected a file path");
      } else {
        const std::string p = resolve(base_dir, cloud->get<std::string>());
        if (!fs::exists(p)) {
          errors.push_back(f.at("cloud") + ": file not found: " + p);
        } else {
          try {
            out.push_back(read_cloud_csv_file(p));
            f.finish();
            continue;
          } catch (const std::exception& e) {
            errors.push_back(f.at("cloud") + ": " + e.what());
          }
        }
      }
    }
    f.finish();
    out.emplace_back();
  }
  return out;
}

std::vector<DensitySpec> read_densities(const json* arr, std::vector<std::string>& errors) {
  std::vector<DensitySpec> out;
  if (!arr) return out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    out.push_back(density_from_json((*arr)[i], errors, fmt::format("densities[{}]", i)));
  }
  return out;
}

void check_times(const std::vector<double>& times, const ModelParams& p, const std::string& path,
                 std::vector<std::string>& errors) {
  if (times.empty()) errors.push_back(path + ": at least one time is required");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0 && times[i] <= p.horizon_T)) {
      errors.push_back(fmt::format("{}[{}]: must lie in [0, horizon_T]", path, i));
    }
  }
}

void append_stripped(std::vector<std::string>& errors, std::vector<std::string> more) {
  for (auto& e : more) {
    if (!e.empty() && e[0] == '.') e.erase(0, 1);
    errors.push_back(std::move(e));
  }
}

}  // namespace

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Micro: return "micro";
    case Mode::MeanField: return "meanfield";
    case Mode::Converge: return "converge";
    case Mode::Stability: return "stability";
    case Mode::SchemeOrder: return "scheme-order";
    case Mode::Dist: return "dist";
  }
  return "?";
}

ScenarioFile parse_scenario(const json& doc, const std::string& base_dir) {
  std::vector<std::string> errors;
  ScenarioFile s;
  Fields top(doc, "", errors);
  if (!top.ok()) throw ValidationError("invalid scenario", std::move(errors));

  s.version = static_cast<int>(top.integer("version", ScenarioFile::kVersion));
  if (s.version != ScenarioFile::kVersion) {
    errors.push_back(fmt::format("version: unsupported version {} (expected {})", s.version, ScenarioFile::kVersion));
  }
  const std::string mode = top.string("mode");
  static const std::vector<Mode> all = {Mode::Micro, Mode::MeanField, Mode::Converge,
                                        Mode::Stability, Mode::SchemeOrder, Mode::Dist};
  const auto found = std::find_if(all.begin(), all.end(), [&](Mode m) { return mode_name(m) == mode; });
  if (found == all.end()) {
    if (!mode.empty()) {
      errors.push_back("mode: expected one of micro, meanfield, converge, stability, scheme-order, dist");
    }
    top.finish();
    throw ValidationError("invalid scenario", std::move(errors));
  }
  s.mode = *found;

  if (s.mode == Mode::Dist) {
    s.seed = top.unsigned_integer("seed", false);
    for (auto [key, target] : {std::pair{"a", &s.cloud_a}, std::pair{"b", &s.cloud_b}}) {
      const std::string p = top.string(key);
      if (p.empty()) continue;
      *target = resolve(base_dir, p);
      if (!fs::exists(*target)) errors.push_back(std::string(key) + ": file not found: " + *target);
    }
    s.gw_a = top.number("gw_a", 1.0, false);
    s.gw_b = top.number("gw_b", 1.0, false);
    if (!(s.gw_a > 0.0)) errors.push_back("gw_a: must be > 0");
    if (!(s.gw_b > 0.0)) errors.push_back("gw_b: must be > 0");
    s.write_plan = top.boolean("plan", false);
    top.finish();
    if (!errors.empty()) throw ValidationError("invalid scenario", std::move(errors));
    return s;
  }

  s.seed = top.unsigned_integer("seed");
  const std::size_t before_params = errors.size();
  if (const json* p = top.find("params", true)) s.params = params_from_json(*p, errors, "params");
  const bool params_ok = errors.size() == before_params && top.find("params", true);

  switch (s.mode) {
    case Mode::Micro: {
      s.micro.params = s.params;
      s.micro.vehicles = read_vehicles(top.array("vehicles"), errors);
      s.micro_options.dt_max = top.number("dt_max", 0.01);
      s.micro_options.sample_dt = top.number("sample_dt", 0.1);
      if (const json* t = top.find("t_end", false)) {
        if (!t->is_number()) {
          errors.push_back("t_end: expected a number");
        } else {
          s.micro_options.t_end = t->get<double>();
        }
      }
      if (!(s.micro_options.dt_max > 0.0)) errors.push_back("dt_max: must be > 0");
      if (!(s.micro_options.sample_dt > 0.0)) errors.push_back("sample_dt: must be > 0");
      if (s.micro_options.t_end && !(*s.micro_options.t_end >= 0.0 && *s.micro_options.t_end <= s.params.horizon_T)) {
        errors.push_back("t_end: must lie in [0, horizon_T]");
      }
      if (params_ok) {
        auto more = s.micro.validation_errors("vehicles");
        errors.insert(errors.end(), more.begin(), more.end());
      }
      break;
    }
    case Mode::MeanField:
    case Mode::Stability:
    case Mode::SchemeOrder: {
      s.scheme = read_scheme(top.find("scheme", true), s.mode != Mode::SchemeOrder, errors);
      s.meanfield.params = s.params;
      s.meanfield.lanes = read_lanes(top.array("lanes"), s.seed, base_dir, errors);
      s.meanfield.avs = read_avs(top.array("avs", false), errors);
      if (s.mode == Mode::MeanField) {
        s.meanfield_options.sample_dt = top.number("sample_dt", 0.0, false);
        if (!(s.meanfield_options.sample_dt >= 0.0)) errors.push_back("sample_dt: must be >= 0");
        if (const json* t = top.find("t_end", false)) {
          if (!t->is_number() || !(t->get<double>() >= 0.0 && t->get<double>() <= s.params.horizon_T)) {
            errors.push_back("t_end: must be a number in [0, horizon_T]");
          } else {
            s.meanfield_options.t_end = t->get<double>();
          }
        }
      } else if (s.mode == Mode::Stability) {
        s.deltas = top.numbers("deltas");
        s.times = top.numbers("times");
        s.tolerance = top.number("tolerance", 0.25, false);
        if (s.deltas.empty()) errors.push_back("deltas: at least one value is required");
        for (std::size_t i = 0; i < s.deltas.size(); ++i) {
          if (!(s.deltas[i] > 0.0)) errors.push_back(fmt::format("deltas[{}]: must be > 0", i));
        }
        if (!(s.tolerance > 0.0)) errors.push_back("tolerance: must be > 0");
        if (params_ok) check_times(s.times, s.params, "times", errors);
      } else {
        for (auto k : top.integers("ks")) s.ks.push_back(static_cast<int>(k));
        if (s.ks.size() < 2) errors.push_back("ks: at least two values are required");
        for (std::size_t i = 1; i < s.ks.size(); ++i) {
          if (s.ks[i] <= s.ks[i - 1]) errors.push_back(fmt::format("ks[{}]: values must be increasing", i));
        }
      }
      if (params_ok) {
        append_stripped(errors, s.meanfield.validation_errors(""));
        if (s.mode == Mode::SchemeOrder) {
          for (int k : s.ks) {
            SchemeParams sp = s.scheme;
            sp.k_dyadic = k;
            auto more = sp.validation_errors(s.params, fmt::format("scheme (k = {})", k));
            errors.insert(errors.end(), more.begin(), more.end());
          }
        } else {
          auto more = s.scheme.validation_errors(s.params);
          errors.insert(errors.end(), more.begin(), more.end());
        }
      }
      break;
    }
    case Mode::Converge: {
      auto& c = s.convergence;
      s.scheme = read_scheme(top.find("scheme", true), true, errors);
      c.params = s.params;
      c.scheme = s.scheme;
      c.seed = s.seed;
      c.densities = read_densities(top.array("densities"), errors);
      c.avs = read_avs(top.array("avs", false), errors);
      const long long ref = top.integer("reference_atoms", 2000);
      if (ref < 1) errors.push_back("reference_atoms: must be >= 1");
      c.reference_atoms = static_cast<std::size_t>(std::max(1LL, ref));
      c.micro_dt_max = top.number("micro_dt_max", 0.01);
      if (!(c.micro_dt_max > 0.0)) errors.push_back("micro_dt_max: must be > 0");
      for (auto n : top.integers("Ns")) {
        if (n < 1) {
          errors.push_back("Ns: values must be >= 1");
          continue;
        }
        s.ns.push_back(static_cast<std::size_t>(n));
      }
      if (s.ns.size() < 2) errors.push_back("Ns: at least two values are required");
      for (std::size_t i = 1; i < s.ns.size(); ++i) {
        if (s.ns[i] <= s.ns[i - 1]) errors.push_back(fmt::format("Ns[{}]: values must be increasing", i));
      }
      s.times = top.numbers("times");
      s.slack = top.number("slack", 0.10, false);
      if (!(s.slack >= 0.0)) errors.push_back("slack: must be >= 0");
      if (params_ok) {
        check_times(s.times, s.params, "times", errors);
        if (c.densities.size() != static_cast<std::size_t>(s.params.m_lanes)) {
          errors.push_back(fmt::format("densities: expected {} entries (one per lane), got {}", s.params.m_lanes,
                                       c.densities.size()));
        }
        MeanFieldState probe;
        probe.params = s.params;
        probe.lanes.resize(static_cast<std::size_t>(s.params.m_lanes));
        probe.avs = c.avs;
        append_stripped(errors, probe.validation_errors(""));
        auto more = s.scheme.validation_errors(s.params);
        errors.insert(errors.end(), more.begin(), more.end());
      }
      break;
    }
    case Mode::Dist:
      break;
  }
  top.finish();
  if (!errors.empty()) throw ValidationError("invalid scenario", std::move(errors));
  return s;
}

ScenarioFile load_scenario(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("scenario file not found: " + path);
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: JSON parse error: {}", path, e.what()));
  }
  return parse_scenario(doc, fs::path(path).parent_path().string().empty()
                                 ? std::string(".")
                                 : fs::path(path).parent_path().string());
}

void run_scenario(const ScenarioFile& s, const std::string& out_dir, std::ostream& out) {
  auto write = [&](const std::string& name, const std::string& content) {
    write_file_atomic((fs::path(out_dir) / name).string(), content);
  };
  switch (s.mode) {
    case Mode::Micro: {
      const auto log = simulate_sigma1(s.micro, s.micro_options);
      write("trajectory.csv", log.trajectory_csv());
      write("events.csv", log.events_csv());
      const auto changes = std::count_if(log.events.begin(), log.events.end(),
                                         [](const LaneChangeRecord& e) { return e.from != e.to; });
      out << fmt::format("micro: {} samples, {} timer events, {} lane changes, {} warnings\n", log.times.size(),
                         log.events.size(), changes, log.warnings.size());
      break;
    }
    case Mode::MeanField: {
      const auto tr = simulate_sigma2(s.meanfield, s.scheme, s.meanfield_options);
      std::string index = "sample,t\n";
      for (std::size_t k = 0; k < tr.times.size(); ++k) {
        index += fmt::format("{},{}\n", k, format_real(tr.times[k]));
        for (std::size_t j = 0; j < tr.lanes[k].size(); ++j) {
          write(fmt::format("lane{}_sample{}.csv", j + 1, k), cloud_to_csv(tr.lanes[k][j]));
        }
      }
      write("samples.csv", index);
      write("avs.csv", tr.avs_csv());
      write("mass_balance.csv", tr.mass_balance_csv());
      write("events.csv", tr.events_csv());
      double mass = 0.0;
      for (const auto& c : tr.final_state.lanes) mass += c.total_mass();
      out << fmt::format("meanfield: {} steps, {} samples, final mass {:.15g}, {} atoms\n", tr.steps.size(),
                         tr.times.size(), mass, tr.steps.empty() ? 0 : tr.steps.back().atoms);
      break;
    }
    case Mode::Converge: {
      const auto rep = convergence_experiment(s.convergence, s.ns, s.times, s.slack);
      write("convergence.csv", rep.csv());
      const double frac = rep.fraction_monotone();
      out << fmt::format("converge: {} (fraction of (t, lane) cells nonincreasing in N within {} slack: {})\n",
                         frac >= 0.8 ? "PASS" : "FAIL", s.slack, frac);
      break;
    }
    case Mode::Stability: {
      const auto rep = stability_experiment(s.meanfield, s.scheme, s.deltas, s.times, s.tolerance);
      write("stability.csv", rep.csv());
      out << fmt::format("stability: {} (deviation/delta ratios {} within {})\n", rep.consistent ? "PASS" : "FAIL",
                         rep.consistent ? "agree" : "disagree", rep.tolerance);
      break;
    }
    case Mode::SchemeOrder: {
      const auto rep = scheme_convergence(s.meanfield, s.scheme, s.ks);
      write("scheme_order.csv", rep.csv());
      std::string ratios;
      for (double r : rep.ratios) ratios += fmt::format("{}{:.4g}", ratios.empty() ? "" : " ", r);
      out << fmt::format("scheme-order: {} (gap ratios: {})\n", rep.first_order ? "PASS" : "FAIL",
                         ratios.empty() ? "none" : ratios);
      break;
    }
    case Mode::Dist: {
      const auto a = read_cloud_csv_file(s.cloud_a);
      const auto b = read_cloud_csv_file(s.cloud_b);
      const auto r = (a.empty() && b.empty()) ? TransportResult{} : gw11(a, b, s.gw_a, s.gw_b);
      if (!out_dir.empty()) {
        write("distance.csv", "distance\n" + format_real(r.distance) + "\n");
        if (s.write_plan) write("plan.csv", plan_to_csv(r.plan));
      }
      out << format_real(r.distance) << "\n";
      break;
    }
  }
}

std::string scenario_schema() {
  return R"(Scenario file (JSON). Unknown fields are rejected; relative paths resolve
against the scenario file's directory.

Common:
  version  1
  mode     micro | meanfield | converge | stability | scheme-order | dist
  seed     nonnegative integer (not required for dist)
  params   {alpha, beta, eps0, delta_lc, v_max, d_mid, p_max, a_ref, u_max,
            n_tau (int), horizon_T, m_lanes (int), gw_a?, gw_b?}

control:   a number u, or {"breakpoints": [0, t1, ...], "values": [u0, u1, ...]}
density:   {"kind": "uniform-box", x_min, x_max, v_min, v_max, mass}
           {"kind": "truncated-gaussian", mean: [x, v], cov: [[.,.],[.,.]],
            truncation, mass}
scheme:    {k_dyadic, eps_mass?, grid_h?, dt_max?, merge_window?}
lanes:     list, one per lane: {"density": density, "atoms": n} or {"cloud": "file.csv"}
avs:       list of {id, lane, y, w, timer0, control}

micro:        vehicles: list of {id, class: human|autonomous, lane, x, v, timer0,
                                 control (autonomous only)}
              dt_max, sample_dt, t_end?
              -> trajectory.csv (t,id,lane,x,v), events.csv (t,id,from,to)
meanfield:    scheme, lanes, avs?, sample_dt?, t_end?
              -> samples.csv, lane<j>_sample<k>.csv, avs.csv, mass_balance.csv, events.csv
converge:     scheme, densities (one per lane), avs?, Ns, times, reference_atoms,
              micro_dt_max, slack?            -> convergence.csv
stability:    scheme, lanes, avs?, deltas, times, tolerance?  -> stability.csv
scheme-order: scheme (k_dyadic optional), lanes, avs?, ks    -> scheme_order.csv
dist:         a, b (cloud CSV files, header x,v,mass), gw_a?, gw_b?, plan?
              -> distance on stdout; distance.csv and plan.csv in --out-dir
)";
}

}  // namespace simtraffic
