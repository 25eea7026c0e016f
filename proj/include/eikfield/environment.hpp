#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace eikfield {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Sphere {
  Vec center;
  double radius = 0.0;
};

struct Box {
  Vec center;
  Vec half;  // half extents per axis
};

// Axis-aligned workspace with box/sphere obstacles. Bounds are a d x 2 matrix,
// column 0 = lower, column 1 = upper. The speed model maps clearance through
// a clipped linear ramp: s(q) = (s_const / d_max) * clip(clearance(q), d_min, d_max),
// so speed lives in [s_const*d_min/d_max, s_const].
class Environment {
 public:
  int id = 0;
  int dims = 0;
  Mat bounds;  // dims x 2
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  double d_min = 0.1;
  double d_max = 1.0;
  double s_const = 1.0;
  std::uint64_t fourier_seed = 0;
  int fourier_h = 64;
  double fourier_sigma = 1.0;

  // Signed distance to the nearest obstacle surface; positive outside
  // obstacles, negative inside. With no obstacles returns distance to the
  // nearest workspace bound (always positive inside the box).
  double clearance(const Vec& q) const;

  double speed(const Vec& q) const;
  // Progressive relaxation of the speed target: (1 - alpha) + alpha * speed(q).
  double speed_alpha(const Vec& q, double alpha) const;

  double s_min() const { return s_const * d_min / d_max; }

  bool inside_bounds(const Vec& q) const;
  Vec clip_to_bounds(const Vec& q) const;
  double diameter() const;

  // Gaussian Fourier frequency matrix (dims x fourier_h), frozen per
  // environment: entries N(0, fourier_sigma^2) drawn from fourier_seed.
  Mat fourier_code() const;

  void validate() const;  // throws std::invalid_argument on malformed input
};

Environment load_environment(const std::string& path);
void save_environment(const Environment& env, const std::string& path);

// Start/goal pairs packed row-wise; pairs.row(i) = [q_s, q_g] (2*dims).
struct Dataset {
  int dims = 0;
  Mat pairs;  // count x 2*dims

  Eigen::Index count() const { return pairs.rows(); }
};

// Rejection-samples pairs with both endpoints collision-free and separated by
// at least min_separation. Throws std::runtime_error if the estimated
// acceptance rate over an initial probe batch falls below 1%.
Dataset sample_pairs(const Environment& env, Eigen::Index count, std::uint64_t seed,
                     double min_separation);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace eikfield
