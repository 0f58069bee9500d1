#include "simtraffic/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"
#include "simtraffic/kernels.hpp"

namespace simtraffic {

double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double c = 0.0;
  for (double x : values) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  return sum + c;
}

ParticleCloud::ParticleCloud(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  std::vector<double> masses;
  masses.reserve(atoms_.size());
  for (const auto& a : atoms_) {
    if (!std::isfinite(a.x) || !std::isfinite(a.v) || !std::isfinite(a.mass)) {
      throw ValidationError("particle cloud: non-finite atom");
    }
    if (a.mass < 0.0) throw ValidationError("particle cloud: negative mass");
    if (a.v < 0.0) throw ValidationError("particle cloud: negative velocity");
    masses.push_back(a.mass);
  }
  total_mass_ = compensated_sum(masses);
}

double ParticleCloud::support_radius() const {
  double r = 0.0;
  for (const auto& a : atoms_) r = std::max(r, std::hypot(a.x, a.v));
  return r;
}

double ParticleCloud::first_moment() const {
  std::vector<double> terms;
  terms.reserve(atoms_.size());
  for (const auto& a : atoms_) terms.push_back(a.mass * std::hypot(a.x, a.v));
  return compensated_sum(terms);
}

ParticleCloud ParticleCloud::operator+(const ParticleCloud& other) const {
  std::vector<Atom> all(atoms_);
  all.insert(all.end(), other.atoms_.begin(), other.atoms_.end());
  return ParticleCloud(std::move(all));
}

ParticleCloud ParticleCloud::scaled(double k) const {
  if (k < 0.0) throw ValidationError("particle cloud: negative scale");
  std::vector<Atom> out(atoms_);
  for (auto& a : out) a.mass *= k;
  return ParticleCloud(std::move(out));
}

double conv_accel(const ParticleCloud& mu, const ParticleCloud& nu, double x, double v,
                  const ModelParams& p) {
  double acc = 0.0;
  for (const auto* cloud : {&mu, &nu}) {
    for (const auto& a : cloud->atoms()) {
      const double dx = x - a.x;
      acc += a.mass * pair_interaction(dx, v, v - a.v, p);
    }
  }
  return acc;
}

LaneField::LaneField(const ParticleCloud& mu, const ParticleCloud& nu, const ModelParams& p)
    : params_(p) {
  std::vector<Atom> all;
  all.reserve(mu.size() + nu.size());
  for (const auto* cloud : {&mu, &nu}) {
    for (const auto& a : cloud->atoms()) {
      if (a.mass > 0.0) all.push_back(a);
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Atom& a, const Atom& b) { return a.x < b.x; });
  xs_.reserve(all.size());
  vs_.reserve(all.size());
  ms_.reserve(all.size());
  for (const auto& a : all) {
    xs_.push_back(a.x);
    vs_.push_back(a.v);
    ms_.push_back(a.mass);
  }
}

double LaneField::operator()(double x, double v) const {
  // Contributing atoms satisfy x - x_k in (-eps0, 0), i.e. x_k in (x, x + eps0).
  auto first = std::upper_bound(xs_.begin(), xs_.end(), x);
  const double limit = x + params_.eps0;
  double acc = 0.0;
  for (auto it = first; it != xs_.end() && *it < limit; ++it) {
    const auto k = static_cast<std::size_t>(it - xs_.begin());
    const double dx = x - xs_[k];
    acc += ms_[k] * pair_interaction(dx, v, v - vs_[k], params_);
  }
  return acc;
}

std::vector<std::string> DensitySpec::validation_errors(const std::string& path) const {
  std::vector<std::string> errors;
  if (!(std::isfinite(mass) && mass > 0.0)) errors.push_back(path + ".mass: must be > 0");
  if (kind == Kind::UniformBox) {
    if (!(x_max > x_min)) errors.push_back(path + ": x_max must exceed x_min");
    if (!(v_max > v_min)) errors.push_back(path + ": v_max must exceed v_min");
    if (v_min < 0.0) errors.push_back(path + ".v_min: velocities must be >= 0");
  } else {
    if (!(cov_xx > 0.0) || !(cov_vv > 0.0) || cov_xx * cov_vv - cov_xv * cov_xv <= 0.0) {
      errors.push_back(path + ".cov: must be positive definite");
    } else {
      const double l00 = std::sqrt(cov_xx);
      const double l10 = cov_xv / l00;
      const double l11 = std::sqrt(cov_vv - l10 * l10);
      if (mean_v - truncation * (std::abs(l10) + l11) < 0.0) {
        errors.push_back(path + ": truncated support reaches negative velocities");
      }
    }
    if (!(truncation > 0.0)) errors.push_back(path + ".truncation: must be > 0");
  }
  return errors;
}

namespace {

double get_number(const nlohmann::json& j, const char* key, std::vector<std::string>& errors,
                  const std::string& path) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    errors.push_back(path + "." + key + ": missing or not a number");
    return 0.0;
  }
  return it->get<double>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    std::vector<std::string>& errors, const std::string& path) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      errors.push_back(path + "." + key + ": unknown field");
    }
  }
}

}  // namespace

DensitySpec density_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                              const std::string& path) {
  DensitySpec d;
  if (!j.is_object()) {
    errors.push_back(path + ": expected an object");
    return d;
  }
  const std::string kind = j.value("kind", "");
  const std::size_t before = errors.size();
  if (kind == "uniform-box") {
    d.kind = DensitySpec::Kind::UniformBox;
    reject_unknown(j, {"kind", "x_min", "x_max", "v_min", "v_max", "mass"}, errors, path);
    d.x_min = get_number(j, "x_min", errors, path);
    d.x_max = get_number(j, "x_max", errors, path);
    d.v_min = get_number(j, "v_min", errors, path);
    d.v_max = get_number(j, "v_max", errors, path);
  } else if (kind == "truncated-gaussian") {
    d.kind = DensitySpec::Kind::TruncatedGaussian;
    reject_unknown(j, {"kind", "mean", "cov", "truncation", "mass"}, errors, path);
    try {
      const auto mean = j.at("mean").get<std::vector<double>>();
      const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
      if (mean.size() != 2 || cov.size() != 2 || cov[0].size() != 2 || cov[1].size() != 2 ||
          cov[0][1] != cov[1][0]) {
        throw std::invalid_argument("mean must have 2 entries and cov must be symmetric 2x2");
      }
      d.mean_x = mean[0];
      d.mean_v = mean[1];
      d.cov_xx = cov[0][0];
      d.cov_xv = cov[0][1];
      d.cov_vv = cov[1][1];
    } catch (const std::exception& e) {
      errors.push_back(path + ": " + e.what());
    }
    d.truncation = get_number(j, "truncation", errors, path);
  } else {
    errors.push_back(path + ".kind: expected \"uniform-box\" or \"truncated-gaussian\"");
    return d;
  }
  d.mass = get_number(j, "mass", errors, path);
  if (errors.size() == before) {
    auto more = d.validation_errors(path);
    errors.insert(errors.end(), more.begin(), more.end());
  }
  return d;
}

nlohmann::json density_to_json(const DensitySpec& d) {
  if (d.kind == DensitySpec::Kind::UniformBox) {
    return {{"kind", "uniform-box"}, {"x_min", d.x_min}, {"x_max", d.x_max},
            {"v_min", d.v_min},      {"v_max", d.v_max}, {"mass", d.mass}};
  }
  return {{"kind", "truncated-gaussian"},
          {"mean", {d.mean_x, d.mean_v}},
          {"cov", {{d.cov_xx, d.cov_xv}, {d.cov_xv, d.cov_vv}}},
          {"truncation", d.truncation},
          {"mass", d.mass}};
}

namespace {

// Plastic number: the R2 sequence uses its reciprocal powers as generators.
constexpr double kPlastic = 1.32471795724474602596;

double truncated_normal_quantile(double u, double c) {
  // Phi(z) = erfc(-z / sqrt2) / 2, Phi^-1(q) = -sqrt2 erfc_inv(2 q).
  const double lo = 0.5 * std::erfc(c / std::sqrt(2.0));
  const double hi = 1.0 - lo;
  const double q = lo + u * (hi - lo);
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * q);
}

}  // namespace

ParticleCloud discretize(const DensitySpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("discretize: atom count must be >= 1");
  auto errors = spec.validation_errors("density");
  if (!errors.empty()) throw ValidationError("discretize: invalid density", std::move(errors));

  // The seed picks the orientation of each generator; the sequence always
  // starts at (1/2, 1/2).
  const double g0 = (seed & 1u) ? -1.0 / kPlastic : 1.0 / kPlastic;
  const double g1 = (seed & 2u) ? -1.0 / (kPlastic * kPlastic) : 1.0 / (kPlastic * kPlastic);
  const double mass = spec.mass / static_cast<double>(n);

  std::vector<Atom> atoms;
  atoms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i);
    double u0 = 0.5 + k * g0;
    double u1 = 0.5 + k * g1;
    u0 -= std::floor(u0);
    u1 -= std::floor(u1);
    Atom a;
    a.mass = mass;
    if (spec.kind == DensitySpec::Kind::UniformBox) {
      a.x = spec.x_min + u0 * (spec.x_max - spec.x_min);
      a.v = spec.v_min + u1 * (spec.v_max - spec.v_min);
    } else {
      const double z0 = truncated_normal_quantile(u0, spec.truncation);
      const double z1 = truncated_normal_quantile(u1, spec.truncation);
      const double l00 = std::sqrt(spec.cov_xx);
      const double l10 = spec.cov_xv / l00;
      const double l11 = std::sqrt(spec.cov_vv - l10 * l10);
      a.x = spec.mean_x + l00 * z0;
      a.v = std::max(0.0, spec.mean_v + l10 * z0 + l11 * z1);
    }
    atoms.push_back(a);
  }
  return ParticleCloud(std::move(atoms));
}

ParticleCloud push_forward(const ParticleCloud& cloud, const std::function<Atom(const Atom&)>& map) {
  std::vector<Atom> out;
  out.reserve(cloud.size());
  for (const auto& a : cloud.atoms()) {
    Atom b = map(a);
    b.mass = a.mass;
    out.push_back(b);
  }
  return ParticleCloud(std::move(out));
}

ParticleCloud prune_merge(const ParticleCloud& cloud, double eps_mass, double grid_h) {
  if (eps_mass < 0.0 || grid_h < 0.0) throw ValidationError("prune_merge: negative control");
  if (cloud.empty()) return cloud;

  const double threshold = eps_mass * cloud.total_mass() / static_cast<double>(cloud.size());
  std::vector<Atom> kept;
  kept.reserve(cloud.size());
  for (const auto& a : cloud.atoms()) {
    if (!(a.mass < threshold)) kept.push_back(a);
  }
  if (grid_h == 0.0) return ParticleCloud(std::move(kept));

  const double side = grid_h / std::sqrt(2.0);
  struct Cell {
    double mx = 0.0, mv = 0.0, m = 0.0;
    Atom first;
    std::size_t count = 0;
  };
  // Output order follows the first atom seen in each cell.
  std::map<std::pair<long long, long long>, std::size_t> index;
  std::vector<Cell> cells;
  for (const auto& a : kept) {
    const auto key = std::make_pair(static_cast<long long>(std::floor(a.x / side)),
                                    static_cast<long long>(std::floor(a.v / side)));
    auto [it, inserted] = index.try_emplace(key, cells.size());
    if (inserted) cells.push_back(Cell{0.0, 0.0, 0.0, a, 0});
    auto& c = cells[it->second];
    c.mx += a.mass * a.x;
    c.mv += a.mass * a.v;
    c.m += a.mass;
    ++c.count;
  }
  std::vector<Atom> out;
  out.reserve(cells.size());
  for (const auto& c : cells) {
    if (c.count == 1 || c.m == 0.0) {
      Atom a = c.first;
      a.mass = c.m;
      out.push_back(a);
    } else {
      out.push_back(Atom{c.mx / c.m, std::max(0.0, c.mv / c.m), c.m});
    }
  }
  return ParticleCloud(std::move(out));
}

void write_cloud_csv(std::ostream& out, const ParticleCloud& cloud) { out << cloud_to_csv(cloud); }

std::string cloud_to_csv(const ParticleCloud& cloud) {
  std::string s = "x,v,mass\n";
  for (const auto& a : cloud.atoms()) {
    s += format_real(a.x) + "," + format_real(a.v) + "," + format_real(a.mass) + "\n";
  }
  return s;
}

ParticleCloud read_cloud_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("cloud csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,v,mass") throw ValidationError("cloud csv: expected header x,v,mass");
  std::vector<Atom> atoms;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    Atom a;
    char c1 = 0, c2 = 0;
    if (!(ls >> a.x >> c1 >> a.v >> c2 >> a.mass) || c1 != ',' || c2 != ',') {
      throw ValidationError("cloud csv: malformed line " + std::to_string(lineno));
    }
    atoms.push_back(a);
  }
  return ParticleCloud(std::move(atoms));
}

ParticleCloud read_cloud_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cloud file " + path);
  return read_cloud_csv(in);
}

}  // namespace simtraffic
