#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "simtraffic/harness.hpp"
#include "simtraffic/meanfield.hpp"
#include "simtraffic/micro.hpp"

namespace simtraffic {

enum class Mode { Micro, MeanField, Converge, Stability, SchemeOrder, Dist };

std::string mode_name(Mode m);

/// A fully validated run configuration.
struct ScenarioFile {
  static constexpr int kVersion = 1;

  int version = kVersion;
  Mode mode = Mode::Micro;
  std::uint64_t seed = 0;
  ModelParams params;

  // micro
  MicroState micro;
  MicroRunOptions micro_options;

  // meanfield, stability, scheme-order
  MeanFieldState meanfield;
  SchemeParams scheme;
  MeanFieldRunOptions meanfield_options;

  // converge
  ConvergenceScenario convergence;
  std::vector<std::size_t> ns;
  std::vector<double> times;  // converge and stability
  double slack = 0.10;

  // stability
  std::vector<double> deltas;
  double tolerance = 0.25;

  // scheme-order
  std::vector<int> ks;

  // dist
  std::string cloud_a, cloud_b;
  double gw_a = 1.0, gw_b = 1.0;
  bool write_plan = false;
};

/// Parses and validates a scenario document. Relative file paths resolve
/// against `base_dir`. Throws ValidationError listing every problem with its
/// field path.
ScenarioFile parse_scenario(const nlohmann::json& doc, const std::string& base_dir = ".");

/// Reads `path` (JSON) and parses it; parse errors become ValidationError.
ScenarioFile load_scenario(const std::string& path);

/// Runs the scenario, writes its output files into `out_dir` (atomically) and
/// a one-line summary to `out`. Throws NumericalError on a numerical abort.
void run_scenario(const ScenarioFile& scenario, const std::string& out_dir, std::ostream& out);

/// Human-readable description of the scenario format, used by --help.
std::string scenario_schema();

}  // namespace simtraffic
