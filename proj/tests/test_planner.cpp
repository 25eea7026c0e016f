#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikfield/environment.hpp"
#include "eikfield/field_net.hpp"
#include "eikfield/fmm.hpp"
#include "eikfield/planner.hpp"

using namespace eikfield;

namespace {

Environment empty_env2() {
  Environment env;
  env.id = 0;
  env.dims = 2;
  env.bounds = Mat(2, 2);
  env.bounds << -1.0, 1.0, -1.0, 1.0;
  env.d_min = 0.1;
  env.d_max = 1.0;
  env.s_const = 1.0;
  env.fourier_h = 8;
  env.fourier_seed = 11;
  return env;
}

Environment sphere_env2(double radius = 0.4) {
  Environment env = empty_env2();
  env.id = 1;
  Sphere s;
  s.center = Vec::Zero(2);
  s.radius = radius;
  env.spheres.push_back(s);
  return env;
}

// With every parameter zeroed the generator emits exactly 1, so the net's
// field is the euclidean distance and the march follows the straight line.
FieldNet unit_tau_net(const Environment& env) {
  FieldNet net(env.dims, 16, 2, env.fourier_h);
  net.init_params(3);
  for (int id = 0; id < net.params().count(); ++id) {
    net.params().weight(id).setZero();
    net.params().bias(id).setZero();
  }
  net.add_env(env);
  return net;
}

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/eikfield_plan_") + name;
}

}  // namespace

TEST_CASE("zeroed parameters really give a unit field") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  CHECK(net.tau(env.id, v2(0.3, -0.2), v2(-0.5, 0.6)) == doctest::Approx(1.0).epsilon(1e-14));
  ad::DiffBundle b = net.tau_grad(env.id, v2(0.1, 0.9), v2(-0.7, 0.2));
  CHECK(b.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(b.grad.norm() == 0.0);
}

TEST_CASE("endpoints already within tolerance yield a two-point path") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Vec qs = v2(0.1, 0.1), qg = v2(0.13, 0.1);
  Path p = plan(net, env, qs, qg, 0.02, 0.06);
  CHECK(p.success);
  CHECK(p.iterations == 0);
  REQUIRE(p.waypoints.size() == 2);
  CHECK(p.waypoints.front() == qs);
  CHECK(p.waypoints.back() == qg);
  CHECK(p.length == doctest::Approx(0.03).epsilon(1e-12));
}

TEST_CASE("marching a unit field walks the straight line") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Vec qs = v2(-0.6, -0.4), qg = v2(0.5, 0.55);
  Path p = plan(net, env, qs, qg, 0.02, 0.06);
  REQUIRE(p.success);
  CHECK(p.iterations > 0);
  double straight = (qs - qg).norm();
  CHECK(p.length <= 1.05 * straight);
  CHECK(p.length >= straight - 0.06);
  CHECK(p.safe_margin > 0.0);
  // Both march fronts stay on the segment between the endpoints.
  Vec dir = (qg - qs).normalized();
  for (const Vec& w : p.waypoints) {
    Vec off = (w - qs) - (w - qs).dot(dir) * dir;
    CHECK(off.norm() <= 1e-9);
  }
}

TEST_CASE("planning is deterministic") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Vec qs = v2(-0.7, 0.2), qg = v2(0.6, -0.5);
  Path a = plan(net, env, qs, qg, 0.015, 0.06);
  Path b = plan(net, env, qs, qg, 0.015, 0.06);
  CHECK(a.success == b.success);
  CHECK(a.length == b.length);
  CHECK(a.iterations == b.iterations);
  REQUIRE(a.waypoints.size() == b.waypoints.size());
  for (std::size_t i = 0; i < a.waypoints.size(); ++i) {
    CHECK(a.waypoints[i] == b.waypoints[i]);
  }
}

TEST_CASE("endpoint validation raises domain errors") {
  Environment env = sphere_env2();
  FieldNet net = unit_tau_net(env);
  CHECK_THROWS_AS(plan(net, env, v2(-1.5, 0.0), v2(0.8, 0.8), 0.02, 0.06), std::domain_error);
  CHECK_THROWS_AS(plan(net, env, v2(0.8, 0.8), v2(0.0, 1.2), 0.02, 0.06), std::domain_error);
  CHECK_THROWS_AS(plan(net, env, v2(0.1, 0.0), v2(0.8, 0.8), 0.02, 0.06), std::domain_error);

  Vec bad3(3);
  bad3 << 0, 0, 0;
  CHECK_THROWS_AS(plan(net, env, bad3, v2(0.8, 0.8), 0.02, 0.06), std::invalid_argument);
  CHECK_THROWS_AS(plan(net, env, v2(-0.8, 0.0), v2(0.8, 0.0), 0.0, 0.06), std::invalid_argument);
  CHECK_THROWS_AS(plan(net, env, v2(-0.8, 0.0), v2(0.8, 0.0), 0.02, 0.0), std::invalid_argument);
}

TEST_CASE("an exhausted iteration budget reports failure with a partial polyline") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Vec qs = v2(-0.8, -0.8), qg = v2(0.8, 0.8);
  Path p = plan(net, env, qs, qg, 0.01, 0.05, 3);
  CHECK_FALSE(p.success);
  CHECK(p.iterations == 3);
  CHECK(std::isnan(p.safe_margin));
  CHECK(p.waypoints.size() == 8);  // four per side
  CHECK(p.length > 0.0);
}

TEST_CASE("validate_path flags a cut through an obstacle with its depth") {
  Environment env = sphere_env2(0.4);
  Path through;
  through.waypoints = {v2(-0.8, 0.0), v2(0.0, 0.0), v2(0.8, 0.0)};
  PathCheck bad = validate_path(env, through);
  CHECK_FALSE(bad.valid);
  CHECK(bad.margin == doctest::Approx(-0.4).epsilon(1e-12));

  Path above;
  above.waypoints = {v2(-0.8, 0.8), v2(0.8, 0.8)};
  PathCheck good = validate_path(env, above);
  CHECK(good.valid);
  CHECK(good.margin == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("validate_path honors a custom sampling step") {
  Environment env = sphere_env2(0.1);
  // Segment endpoints clear the small disc; only a fine sweep sees the dip.
  Path skim;
  skim.waypoints = {v2(-0.5, 0.0), v2(0.5, 0.0)};
  PathCheck coarse = validate_path(env, skim, 1.0);
  CHECK(coarse.valid);  // endpoints only
  PathCheck fine = validate_path(env, skim, 0.01);
  CHECK_FALSE(fine.valid);
  CHECK(fine.margin == doctest::Approx(-0.1).epsilon(1e-9));
}

TEST_CASE("validate_path propagates out-of-bounds waypoints as domain errors") {
  Environment env = empty_env2();
  Path stray;
  stray.waypoints = {v2(0.0, 0.0), v2(1.5, 0.0)};
  CHECK_THROWS_AS(validate_path(env, stray), std::domain_error);
}

TEST_CASE("evaluate summarizes per-pair metrics and writes the csv") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Dataset ds = sample_pairs(env, 12, 5, 0.12);
  EvalSummary s = evaluate(net, env, ds, 0.02, 0.06);
  REQUIRE(s.rows.size() == 12);
  CHECK(s.success_rate == 100.0);
  CHECK(s.mean_length > 0.0);
  CHECK(s.mean_time >= 0.0);
  CHECK(s.mean_margin > 0.0);

  std::string p = temp_path("metrics.csv");
  write_metrics_csv(s, p);
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header.find("time") != std::string::npos);
  CHECK(header.find("length") != std::string::npos);
  CHECK(header.find("margin") != std::string::npos);
  CHECK(header.find("success") != std::string::npos);
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 12);
  std::remove(p.c_str());
}

TEST_CASE("waypoints csv lists one row per waypoint") {
  Environment env = empty_env2();
  FieldNet net = unit_tau_net(env);
  Path p = plan(net, env, v2(-0.5, 0.0), v2(0.5, 0.0), 0.02, 0.06);
  REQUIRE(p.success);
  std::string path = temp_path("waypoints.csv");
  write_waypoints_csv(p, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  int rows = 0;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == static_cast<int>(p.waypoints.size()));
  std::remove(path.c_str());
}

TEST_CASE("grid baseline plans a straight corridor") {
  Environment env = empty_env2();
  Grid speed = rasterize_speed(env, 129, 1.0);
  Vec qs = v2(-0.6, -0.3), qg = v2(0.7, 0.4);
  FmmQueryResult r = fmm_plan_query(env, speed, qs, qg);
  CHECK(r.success);
  CHECK(r.solve_descend_seconds > 0.0);
  double straight = (qs - qg).norm();
  CHECK(r.length <= 1.10 * straight);
  CHECK(r.margin > 0.0);
}

TEST_CASE("field comparison against the grid solver on an exact field") {
  // Pin the clip band to the top of the ramp so the medium is uniform speed
  // 1 everywhere, walls included; the unit net is then the exact solution
  // and any residual is the grid solver's discretization error.
  Environment env = empty_env2();
  env.d_min = 1.0 - 1e-9;
  FieldNet net = unit_tau_net(env);  // the net's field IS euclidean distance
  FmmCompareReport rep = fmm_compare(net, env, 2, 64, 9);
  REQUIRE(rep.per_source.size() == 2);
  CHECK(rep.cells > 1000);
  // All remaining error is the grid solver's own discretization error.
  CHECK(rep.median < 0.05);
  CHECK(rep.p90 < 0.15);
  for (const FieldErrorStats& s : rep.per_source) {
    CHECK(s.cells > 500);
    CHECK(std::isfinite(s.median));
    CHECK(s.median < 0.05);
  }

  FmmCompareReport again = fmm_compare(net, env, 2, 64, 9);
  CHECK(again.median == rep.median);
  CHECK(again.p90 == rep.p90);
  FmmCompareReport other = fmm_compare(net, env, 2, 64, 10);
  CHECK(other.per_source[0].source != rep.per_source[0].source);
}

TEST_CASE("obstacle cells are excluded from the field comparison") {
  Environment env = sphere_env2(0.4);
  FieldNet net = unit_tau_net(env);
  FmmCompareReport rep = fmm_compare(net, env, 1, 64, 4);
  // The disc covers pi * 0.4^2 / 4 of the box; far fewer cells than the
  // full grid must survive the free-space filter.
  CHECK(rep.cells < 64u * 64u - 400u);
  CHECK(rep.cells > 2000u);
}
