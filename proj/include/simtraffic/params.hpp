#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace simtraffic {

/// Physical and model constants shared by every module.
///
/// Units: lengths L, times T. `alpha` is 1/T, `beta` is L^2/T, `delta_lc`,
/// `a_ref` and `u_max` are accelerations L/T^2, `p_max` is a rate 1/T.
struct ModelParams {
  double alpha = 1.0;
  double beta = 1.0;
  double eps0 = 4.0;
  double delta_lc = 0.5;
  double v_max = 2.0;
  double d_mid = 2.0;
  double p_max = 1.0;
  double a_ref = 0.5;
  double u_max = 1.0;
  int n_tau = 1;
  double horizon_T = 1.0;
  double gw_a = 1.0;
  double gw_b = 1.0;
  int m_lanes = 1;

  /// Timer limit T1 = horizon_T / n_tau.
  double timer_limit() const { return horizon_T / n_tau; }

  /// Every violated invariant, each prefixed by `path` (e.g. "params.eps0").
  std::vector<std::string> validation_errors(const std::string& path = "params") const;

  /// Throws ValidationError listing every violated invariant.
  void validate() const;
};

/// Parses a flat JSON object. All fields except gw_a, gw_b are required and
/// unknown keys are rejected. Problems are appended to `errors` with field
/// paths; the returned value is only meaningful when no errors were added.
ModelParams params_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                             const std::string& path = "params");
ModelParams params_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const ModelParams& p);

/// Piecewise-constant, right-continuous control u(t) on [0, horizon].
/// values[i] holds on [breakpoints[i], breakpoints[i+1]).
class ControlSchedule {
 public:
  ControlSchedule() = default;
  /// breakpoints[0] must be 0, strictly increasing, same length as values.
  ControlSchedule(std::vector<double> breakpoints, std::vector<double> values);

  static ControlSchedule constant(double u) { return ControlSchedule({0.0}, {u}); }

  double value_at(double t) const;
  /// First breakpoint strictly after t, or +inf.
  double next_breakpoint_after(double t) const;

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& values() const { return values_; }

  /// Errors for values outside [0, u_max] or breakpoints beyond the horizon.
  std::vector<std::string> validation_errors(const ModelParams& p, const std::string& path) const;

 private:
  std::vector<double> breakpoints_{0.0};
  std::vector<double> values_{0.0};
};

ControlSchedule control_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                                  const std::string& path);
nlohmann::json control_to_json(const ControlSchedule& c);

}  // namespace simtraffic
