#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "simtraffic/params.hpp"

namespace simtraffic {

/// A point mass at (x, v) in position-velocity space.
struct Atom {
  double x = 0.0;
  double v = 0.0;
  double mass = 0.0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

/// Weighted atomic measure on R x R+. Immutable after construction; every
/// transformation returns a new cloud.
class ParticleCloud {
 public:
  ParticleCloud() = default;
  /// Throws ValidationError on negative or non-finite mass, negative velocity,
  /// or non-finite coordinates.
  explicit ParticleCloud(std::vector<Atom> atoms);

  std::span<const Atom> atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  const Atom& operator[](std::size_t i) const { return atoms_[i]; }

  /// Compensated sum of masses.
  double total_mass() const { return total_mass_; }
  /// max |(x, v)| over atoms; 0 for the empty cloud.
  double support_radius() const;
  /// Sum of mass * |(x, v)|.
  double first_moment() const;

  /// Concatenation (sum of measures).
  ParticleCloud operator+(const ParticleCloud& other) const;
  /// Every mass multiplied by k >= 0.
  ParticleCloud scaled(double k) const;

  friend bool operator==(const ParticleCloud& a, const ParticleCloud& b) { return a.atoms_ == b.atoms_; }

 private:
  std::vector<Atom> atoms_;
  double total_mass_ = 0.0;
};

/// Neumaier-compensated summation.
double compensated_sum(std::span<const double> values);

/// Mass-weighted convolution (H1 *_1 (mu + nu) + H2 * (mu + nu))(x, v):
/// sum over atoms of m_k [H1(x - x_k, v) + H2(x - x_k, v - v_k)].
/// Straight sum over every atom; see LaneField for the windowed evaluator.
double conv_accel(const ParticleCloud& mu, const ParticleCloud& nu, double x, double v,
                  const ModelParams& p);

/// Average acceleration A^l(x, v) of a lane with measures (mu, nu).
inline double avg_accel_field(const ParticleCloud& lane_mu, const ParticleCloud& lane_nu, double x,
                              double v, const ModelParams& p) {
  return conv_accel(lane_mu, lane_nu, x, v, p);
}

/// Frozen acceleration field of one lane. Atoms are sorted by position so an
/// evaluation only touches atoms within eps0 ahead of x; the kernels vanish
/// identically elsewhere, so the result equals conv_accel up to summation order.
class LaneField {
 public:
  LaneField() = default;
  LaneField(const ParticleCloud& mu, const ParticleCloud& nu, const ModelParams& p);

  double operator()(double x, double v) const;
  const ModelParams& params() const { return params_; }

 private:
  std::vector<double> xs_;
  std::vector<double> vs_;
  std::vector<double> ms_;
  ModelParams params_;
};

/// Initial density with bounded support.
struct DensitySpec {
  enum class Kind { UniformBox, TruncatedGaussian };

  Kind kind = Kind::UniformBox;
  // uniform-box
  double x_min = 0.0, x_max = 1.0, v_min = 0.0, v_max = 1.0;
  // truncated-gaussian: mean, covariance, truncation at +-truncation standard
  // deviations in whitened coordinates
  double mean_x = 0.0, mean_v = 1.0;
  double cov_xx = 1.0, cov_xv = 0.0, cov_vv = 1.0;
  double truncation = 2.0;
  double mass = 1.0;

  std::vector<std::string> validation_errors(const std::string& path) const;
};

DensitySpec density_from_json(const nlohmann::json& j, std::vector<std::string>& errors,
                              const std::string& path);
nlohmann::json density_to_json(const DensitySpec& d);

/// n atoms of mass |mu0|/n placed on a seeded low-discrepancy (R2 / Kronecker)
/// sequence mapped through the density. The first point is the center of the
/// unit square, so n = 1 yields the box center (or the Gaussian mean).
ParticleCloud discretize(const DensitySpec& spec, std::size_t n, std::uint64_t seed);

/// gamma # mu: positions mapped, masses unchanged.
ParticleCloud push_forward(const ParticleCloud& cloud,
                           const std::function<Atom(const Atom&)>& map);

/// Drops atoms lighter than eps_mass * total / count, then (grid_h > 0) merges
/// atoms sharing a grid cell at their mass-weighted centroid. Cells have side
/// grid_h / sqrt(2) so every merged atom moves by at most grid_h. grid_h == 0
/// disables merging.
ParticleCloud prune_merge(const ParticleCloud& cloud, double eps_mass, double grid_h);

/// CSV with header `x,v,mass`, 17 significant digits.
void write_cloud_csv(std::ostream& out, const ParticleCloud& cloud);
std::string cloud_to_csv(const ParticleCloud& cloud);
ParticleCloud read_cloud_csv(std::istream& in);
ParticleCloud read_cloud_csv_file(const std::string& path);

}  // namespace simtraffic
