#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eikfield/environment.hpp"

namespace eikfield {

// Regular grid over the environment bounds with `res` nodes per axis, node
// i at lo + i * h_axis where h_axis = (hi - lo) / (res - 1). Values are
// stored in row-major order with the last axis fastest.
struct Grid {
  int dims = 0;
  int res = 0;
  Mat bounds;                 // dims x 2
  std::vector<double> values;

  Eigen::Index size() const;
  double spacing(int axis) const;
  Vec node_pos(const std::vector<int>& idx) const;
  Eigen::Index flat(const std::vector<int>& idx) const;
  std::vector<int> unflat(Eigen::Index f) const;
  std::vector<int> nearest_node(const Vec& q) const;

  double& at(const std::vector<int>& idx);
  double at(const std::vector<int>& idx) const;
};

Grid make_grid(const Environment& env, int res);

// Fills grid values with the environment speed (optionally relaxed by alpha).
Grid rasterize_speed(const Environment& env, int res, double alpha = 1.0);

// First-order fast marching solve of |grad T| = 1/S from a point source.
// The source must lie inside the grid bounds (domain_error otherwise) and is
// snapped to the nearest grid node (value 0 there); the snapped cell must
// carry positive speed. Cells with speed <= 0 stay at +inf. Returns the
// arrival-time grid.
Grid fmm_solve(const Grid& speed, const Vec& source);

// Multilinear interpolation of grid values at q. Throws domain_error when q
// is outside the grid bounds.
double sample_time(const Grid& times, const Vec& q);

// Central-difference gradient of the interpolated field (one-sided at the
// border). Used by the descent extractor and by field comparisons.
Vec sample_gradient(const Grid& times, const Vec& q);

// Walks from `start` downhill on the arrival-time field in steps of
// step_scale * min cell spacing until it comes within one cell of the source
// node. Returns the polyline walked; on convergence the last point is the
// snapped source node position. Fails (converged=false) when the gradient
// vanishes or the time stops improving for many consecutive steps.
struct DescentResult {
  bool converged = false;
  std::vector<Vec> points;
};
DescentResult descend_time(const Grid& times, const Vec& start, const Vec& source,
                           double step_scale = 0.5, long max_steps = 100000);

// Binary grid file round-trip (magic "EPTG").
void save_grid(const Grid& g, const std::string& path);
Grid load_grid(const std::string& path);

}  // namespace eikfield
