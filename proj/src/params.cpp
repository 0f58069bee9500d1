#include "simtraffic/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "simtraffic/errors.hpp"

namespace simtraffic {

namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

struct RealField {
  const char* name;
  double ModelParams::*member;
  bool optional;
};

constexpr RealField kRealFields[] = {
    {"alpha", &ModelParams::alpha, false},       {"beta", &ModelParams::beta, false},
    {"eps0", &ModelParams::eps0, false},         {"delta_lc", &ModelParams::delta_lc, false},
    {"v_max", &ModelParams::v_max, false},       {"d_mid", &ModelParams::d_mid, false},
    {"p_max", &ModelParams::p_max, false},       {"a_ref", &ModelParams::a_ref, false},
    {"u_max", &ModelParams::u_max, false},       {"horizon_T", &ModelParams::horizon_T, false},
    {"gw_a", &ModelParams::gw_a, true},          {"gw_b", &ModelParams::gw_b, true},
};

struct IntField {
  const char* name;
  int ModelParams::*member;
};

constexpr IntField kIntFields[] = {{"n_tau", &ModelParams::n_tau},
                                   {"m_lanes", &ModelParams::m_lanes}};

}  // namespace

std::vector<std::string> ModelParams::validation_errors(const std::string& path) const {
  std::vector<std::string> errors;
  for (const auto& f : kRealFields) {
    if (!positive_finite(this->*f.member)) {
      errors.push_back(path + "." + f.name + ": must be finite and > 0");
    }
  }
  if (n_tau < 1) errors.push_back(path + ".n_tau: must be >= 1");
  if (m_lanes < 1) errors.push_back(path + ".m_lanes: must be >= 1");
  return errors;
}

void ModelParams::validate() const {
  auto errors = validation_errors();
  if (!errors.empty()) throw ValidationError("invalid model parameters", std::move(errors));
}

ModelParams params_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                             const std::string& path) {
  ModelParams p;
  if (!j.is_object()) {
    errors.push_back(path + ": expected an object");
    return p;
  }
  std::set<std::string> known;
  for (const auto& f : kRealFields) {
    known.insert(f.name);
    auto it = j.find(f.name);
    if (it == j.end()) {
      if (f.optional) {
        p.*f.member = 1.0;
      } else {
        errors.push_back(path + "." + f.name + ": missing");
      }
      continue;
    }
    if (!it->is_number()) {
      errors.push_back(path + "." + f.name + ": expected a number");
      continue;
    }
    p.*f.member = it->get<double>();
  }
  for (const auto& f : kIntFields) {
    known.insert(f.name);
    auto it = j.find(f.name);
    if (it == j.end()) {
      errors.push_back(path + "." + f.name + ": missing");
      continue;
    }
    if (!it->is_number_integer()) {
      errors.push_back(path + "." + f.name + ": expected an integer");
      continue;
    }
    p.*f.member = it->get<int>();
  }
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) errors.push_back(path + "." + key + ": unknown field");
  }
  const std::size_t before = errors.size();
  auto invariant_errors = p.validation_errors(path);
  // Do not repeat "must be > 0" for fields that were already reported missing.
  for (auto& e : invariant_errors) {
    const auto field = e.substr(0, e.find(':'));
    const bool already = std::any_of(errors.begin(), errors.begin() + static_cast<long>(before),
                                     [&](const std::string& x) { return x.rfind(field + ":", 0) == 0; });
    if (!already) errors.push_back(std::move(e));
  }
  return p;
}

ModelParams params_from_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  auto p = params_from_json(j, errors);
  if (!errors.empty()) throw ValidationError("invalid model parameters", std::move(errors));
  return p;
}

nlohmann::json params_to_json(const ModelParams& p) {
  nlohmann::json j;
  for (const auto& f : kRealFields) j[f.name] = p.*f.member;
  for (const auto& f : kIntFields) j[f.name] = p.*f.member;
  return j;
}

ControlSchedule::ControlSchedule(std::vector<double> breakpoints, std::vector<double> values)
    : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
  if (breakpoints_.empty() || breakpoints_.size() != values_.size()) {
    throw ValidationError("control schedule: breakpoints and values must be nonempty and of equal length");
  }
  if (breakpoints_.front() != 0.0) throw ValidationError("control schedule: first breakpoint must be 0");
  for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
    if (!(breakpoints_[i] > breakpoints_[i - 1])) {
      throw ValidationError("control schedule: breakpoints must be strictly increasing");
    }
  }
  for (double u : values_) {
    if (!std::isfinite(u)) throw ValidationError("control schedule: non-finite value");
  }
}

double ControlSchedule::value_at(double t) const {
  auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
  if (it == breakpoints_.begin()) return values_.front();
  return values_[static_cast<std::size_t>(it - breakpoints_.begin()) - 1];
}

double ControlSchedule::next_breakpoint_after(double t) const {
  auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
  return it == breakpoints_.end() ? std::numeric_limits<double>::infinity() : *it;
}

std::vector<std::string> ControlSchedule::validation_errors(const ModelParams& p,
                                                            const std::string& path) const {
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] < 0.0 || values_[i] > p.u_max) {
      errors.push_back(path + ".values[" + std::to_string(i) + "]: must lie in [0, u_max]");
    }
  }
  if (breakpoints_.back() > p.horizon_T) {
    errors.push_back(path + ".breakpoints: extends beyond horizon_T");
  }
  return errors;
}

ControlSchedule control_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                                  const std::string& path) {
  if (j.is_number()) return ControlSchedule::constant(j.get<double>());
  if (!j.is_object() || !j.contains("breakpoints") || !j.contains("values")) {
    errors.push_back(path + ": expected a number or {breakpoints, values}");
    return {};
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "breakpoints" && key != "values") errors.push_back(path + "." + key + ": unknown field");
  }
  try {
    return ControlSchedule(j.at("breakpoints").get<std::vector<double>>(),
                           j.at("values").get<std::vector<double>>());
  } catch (const std::exception& e) {
    errors.push_back(path + ": " + e.what());
    return {};
  }
}

nlohmann::json control_to_json(const ControlSchedule& c) {
  return {{"breakpoints", c.breakpoints()}, {"values", c.values()}};
}

}  // namespace simtraffic
