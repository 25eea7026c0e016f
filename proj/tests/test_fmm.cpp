#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikfield/environment.hpp"
#include "eikfield/fmm.hpp"

using namespace eikfield;

namespace {

Environment empty_env(int dims = 2) {
  Environment env;
  env.id = 0;
  env.dims = dims;
  env.bounds = Mat(dims, 2);
  for (int i = 0; i < dims; ++i) {
    env.bounds(i, 0) = -1.0;
    env.bounds(i, 1) = 1.0;
  }
  env.d_min = 0.1;
  env.d_max = 1.0;
  env.s_const = 1.0;
  env.fourier_h = 4;
  env.fourier_seed = 7;
  return env;
}

Environment sphere_env(double radius = 0.4) {
  Environment env = empty_env(2);
  env.id = 1;
  Sphere s;
  s.center = Vec::Zero(2);
  s.radius = radius;
  env.spheres.push_back(s);
  return env;
}

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

// Constant unit speed everywhere: arrival time is exactly euclidean distance
// from the snapped source node.
Grid unit_speed(const Environment& env, int res) {
  Grid g = make_grid(env, res);
  std::fill(g.values.begin(), g.values.end(), 1.0);
  return g;
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/eikfield_fmm_") + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double max_abs_error_vs_distance(const Grid& times, const Vec& src_node) {
  double worst = 0.0;
  std::vector<int> idx(times.dims, 0);
  for (Eigen::Index f = 0; f < times.size(); ++f) {
    Vec q = times.node_pos(times.unflat(f));
    double want = (q - src_node).norm();
    worst = std::max(worst, std::abs(times.values[f] - want));
  }
  return worst;
}

}  // namespace

TEST_CASE("constant speed field reproduces euclidean distance") {
  Environment env = empty_env();
  const int res = 128;
  Grid speed = unit_speed(env, res);
  Vec src = v2(-0.5, -0.25);
  Grid times = fmm_solve(speed, src);
  Vec src_node = times.node_pos(times.nearest_node(src));

  double h = times.spacing(0);
  double diag = h * std::sqrt(2.0);
  double worst = max_abs_error_vs_distance(times, src_node);
  CHECK(worst <= 2.0 * diag);

  // Axis neighbors of the source are one step away at unit speed.
  std::vector<int> idx = times.nearest_node(src);
  idx[0] += 1;
  CHECK(times.at(idx) == doctest::Approx(h).epsilon(1e-9));
  idx[0] -= 2;
  CHECK(times.at(idx) == doctest::Approx(h).epsilon(1e-9));
}

TEST_CASE("refining the grid shrinks the worst-case error") {
  Environment env = empty_env();
  Vec src = v2(0.0, 0.0);  // exact node at every even resolution offset
  auto worst_at = [&](int res) {
    Grid speed = unit_speed(env, res);
    Grid times = fmm_solve(speed, src);
    Vec src_node = times.node_pos(times.nearest_node(src));
    return max_abs_error_vs_distance(times, src_node);
  };
  double e64 = worst_at(65);
  double e128 = worst_at(129);
  CHECK(e128 < e64);
  CHECK(e64 / e128 >= 1.5);
}

TEST_CASE("halving the speed exactly doubles every arrival time") {
  Environment env = sphere_env();
  const int res = 48;
  Grid fast = rasterize_speed(env, res, 1.0);
  Grid slow = fast;
  for (double& s : slow.values) s *= 0.5;
  Vec src = v2(-0.8, -0.8);
  Grid tf = fmm_solve(fast, src);
  Grid ts = fmm_solve(slow, src);
  REQUIRE(tf.size() == ts.size());
  for (Eigen::Index f = 0; f < tf.size(); ++f) {
    CHECK(std::abs(ts.values[f] - 2.0 * tf.values[f]) <= 1e-12 * std::max(1.0, ts.values[f]));
  }
}

TEST_CASE("solver output is deterministic bit for bit") {
  Environment env = sphere_env();
  Grid speed = rasterize_speed(env, 64, 1.0);
  Vec src = v2(0.7, -0.6);
  Grid a = fmm_solve(speed, src);
  Grid b = fmm_solve(speed, src);
  REQUIRE(a.size() == b.size());
  for (Eigen::Index f = 0; f < a.size(); ++f) {
    CHECK(a.values[f] == b.values[f]);
  }
}

TEST_CASE("arrival times are finite, nonnegative, zero only at the source") {
  Environment env = sphere_env();
  Grid speed = rasterize_speed(env, 64, 1.0);
  Vec src = v2(-0.7, 0.7);
  Grid times = fmm_solve(speed, src);
  Eigen::Index src_flat = times.flat(times.nearest_node(src));
  for (Eigen::Index f = 0; f < times.size(); ++f) {
    CHECK(std::isfinite(times.values[f]));
    if (f == src_flat) {
      CHECK(times.values[f] == 0.0);
    } else {
      CHECK(times.values[f] > 0.0);
    }
  }
}

TEST_CASE("obstacles slow the front rather than blocking it") {
  // The speed floor keeps interior cells marching, so crossing the sphere
  // takes noticeably longer than the straight-line time but stays finite.
  Environment env = sphere_env(0.4);
  Grid speed = rasterize_speed(env, 128, 1.0);
  Vec src = v2(-0.8, 0.0);
  Grid times = fmm_solve(speed, src);
  double t_far = sample_time(times, v2(0.8, 0.0));
  CHECK(std::isfinite(t_far));
  CHECK(t_far > 1.6 * 1.05);  // straight-line distance is 1.6 at unit speed
}

TEST_CASE("sample_time is exact on nodes and multilinear between them") {
  Environment env = empty_env();
  Grid g = make_grid(env, 5);  // h = 0.5
  for (Eigen::Index f = 0; f < g.size(); ++f) g.values[f] = static_cast<double>(f);

  std::vector<int> idx{2, 3};
  CHECK(sample_time(g, g.node_pos(idx)) == doctest::Approx(g.at(idx)).epsilon(1e-12));

  // Midpoint of a cell averages its four corners.
  Vec q = v2(-1.0 + 0.25, -1.0 + 0.25);
  double want = 0.25 * (g.values[0] + g.values[1] + g.values[5] + g.values[6]);
  CHECK(sample_time(g, q) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("sample_time rejects points outside the grid") {
  Environment env = empty_env();
  Grid g = unit_speed(env, 8);
  CHECK_THROWS_AS(sample_time(g, v2(1.0001, 0.0)), std::domain_error);
  CHECK_THROWS_AS(sample_time(g, v2(0.0, -1.5)), std::domain_error);
  CHECK_NOTHROW(sample_time(g, v2(1.0, 1.0)));
  CHECK_NOTHROW(sample_time(g, v2(-1.0, -1.0)));
}

TEST_CASE("sample_gradient points away from the source on a distance field") {
  Environment env = empty_env();
  Grid speed = unit_speed(env, 129);
  Vec src = v2(0.0, 0.0);
  Grid times = fmm_solve(speed, src);
  Vec q = v2(0.5, 0.25);
  Vec g = sample_gradient(times, q);
  Vec dir = q / q.norm();
  CHECK(g.norm() == doctest::Approx(1.0).epsilon(0.08));
  CHECK(g.dot(dir) / g.norm() > 0.99);
}

TEST_CASE("descent on an empty field walks a near-straight path to the source") {
  Environment env = empty_env();
  Grid speed = unit_speed(env, 129);
  Vec src = v2(-0.5, -0.5);
  Grid times = fmm_solve(speed, src);
  DescentResult dr = descend_time(times, v2(0.6, 0.6), src);
  REQUIRE(dr.converged);
  REQUIRE(dr.points.size() >= 2);

  Vec src_node = times.node_pos(times.nearest_node(src));
  CHECK((dr.points.back() - src_node).norm() <= 1e-12);

  double length = 0.0;
  for (std::size_t i = 1; i < dr.points.size(); ++i) {
    length += (dr.points[i] - dr.points[i - 1]).norm();
  }
  double straight = (dr.points.front() - src_node).norm();
  CHECK(length <= 1.05 * straight);
}

TEST_CASE("descent from the source itself is a single point") {
  Environment env = empty_env();
  Grid speed = unit_speed(env, 65);
  Vec src = v2(0.25, -0.25);
  Grid times = fmm_solve(speed, src);
  Vec src_node = times.node_pos(times.nearest_node(src));
  DescentResult dr = descend_time(times, src_node, src);
  REQUIRE(dr.converged);
  CHECK(dr.points.size() == 1);
  CHECK((dr.points[0] - src_node).norm() == 0.0);
}

TEST_CASE("descent around an obstacle stays out of its deep interior") {
  Environment env = sphere_env(0.4);
  Grid speed = rasterize_speed(env, 129, 1.0);
  Vec src = v2(-0.8, 0.0);
  Grid times = fmm_solve(speed, src);
  DescentResult dr = descend_time(times, v2(0.8, 0.0), src);
  REQUIRE(dr.converged);
  double worst = 0.0;
  for (const Vec& p : dr.points) worst = std::min(worst, env.clearance(p));
  // The path may clip the slow region's rim but must not cut through the
  // middle where speed sits at the floor.
  CHECK(worst > -0.2);
}

TEST_CASE("grid files round-trip byte for byte") {
  Environment env = sphere_env();
  Grid g = rasterize_speed(env, 33, 0.75);
  std::string p1 = temp_path("roundtrip1.eptg");
  std::string p2 = temp_path("roundtrip2.eptg");
  save_grid(g, p1);
  Grid back = load_grid(p1);
  CHECK(back.dims == g.dims);
  CHECK(back.res == g.res);
  CHECK(back.bounds == g.bounds);
  REQUIRE(back.values.size() == g.values.size());
  for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(back.values[i] == g.values[i]);
  save_grid(back, p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("load_grid rejects files that are not grids") {
  std::string p = temp_path("junk.eptg");
  {
    std::ofstream out(p, std::ios::binary);
    out << "this is not a grid";
  }
  CHECK_THROWS_AS(load_grid(p), std::runtime_error);
  std::remove(p.c_str());
}

TEST_CASE("solver input validation") {
  Environment env = empty_env();
  CHECK_THROWS_AS(make_grid(env, 2), std::invalid_argument);
  CHECK_NOTHROW(make_grid(env, 3));

  Grid speed = unit_speed(env, 16);
  Vec bad3(3);
  bad3 << 0, 0, 0;
  CHECK_THROWS_AS(fmm_solve(speed, bad3), std::invalid_argument);
  CHECK_THROWS_AS(fmm_solve(speed, v2(1.2, 0.0)), std::domain_error);

  Grid dead = speed;
  std::vector<int> origin = dead.nearest_node(v2(0.0, 0.0));
  dead.at(origin) = 0.0;
  CHECK_THROWS_AS(fmm_solve(dead, v2(0.0, 0.0)), std::invalid_argument);
}

TEST_CASE("3d solve matches euclidean distance at constant speed") {
  Environment env = empty_env(3);
  Grid speed = make_grid(env, 33);
  std::fill(speed.values.begin(), speed.values.end(), 1.0);
  Vec src(3);
  src << 0.0, 0.0, 0.0;
  Grid times = fmm_solve(speed, src);
  Vec src_node = times.node_pos(times.nearest_node(src));
  double h = times.spacing(0);
  double worst = max_abs_error_vs_distance(times, src_node);
  CHECK(worst <= 3.0 * h * std::sqrt(3.0));
}
