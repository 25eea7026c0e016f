#include "eikfield/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "eikfield/rng.hpp"

namespace eikfield {

namespace {

double polyline_length(const std::vector<Vec>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

// Arrival-time gradient at one endpoint from the tau bundle:
// grad T = rr_hat / tau - (|rr| / tau^2) * grad tau, rr pointing from the
// other endpoint to this one.
Vec time_gradient(const ad::DiffBundle& b, const Vec& here, const Vec& other, int lo, int d) {
  Vec rr = here - other;
  double dist = rr.norm();
  double tau = b.value;
  return rr / (dist * tau) - (dist / (tau * tau)) * b.grad.segment(lo, d);
}

}  // namespace

Path plan(FieldNet& net, const Environment& env, const Vec& q_s, const Vec& q_g, double beta,
          double d_goal, long max_iters, int stall_window) {
  const int d = env.dims;
  if (q_s.size() != d || q_g.size() != d) {
    throw std::invalid_argument("plan: endpoint dimension does not match environment");
  }
  if (!env.inside_bounds(q_s) || !env.inside_bounds(q_g)) {
    throw std::domain_error("plan: endpoint outside workspace bounds");
  }
  if (env.clearance(q_s) <= 0.0 || env.clearance(q_g) <= 0.0) {
    throw std::domain_error("plan: endpoint inside an obstacle");
  }
  if (!(beta > 0.0) || !(d_goal > 0.0)) {
    throw std::invalid_argument("plan: beta and d_goal must be positive");
  }
  if (max_iters <= 0) {
    max_iters = std::lround(10.0 * env.diameter() / (beta * env.s_min()));
  }

  Path path;
  std::vector<Vec> side_a{q_s};
  std::vector<Vec> side_b{q_g};

  const auto t0 = std::chrono::steady_clock::now();
  Vec a = q_s, b = q_g;
  bool proximity = (a - b).norm() < d_goal;
  double best_dist = (a - b).norm();
  int since_best = 0;

  if (!proximity) {
    try {
      for (long it = 0; it < max_iters; ++it) {
        // The field is refreshed after each half-step: the goal-side update
        // sees the already-moved start.
        ad::DiffBundle bun = net.tau_grad_reverse(env.id, a, b);
        double sa = speed_direct(bun, a, b, Side::Start);
        Vec ga = time_gradient(bun, a, b, 0, d);
        a -= beta * sa * sa * ga;
        a = env.clip_to_bounds(a);

        bun = net.tau_grad_reverse(env.id, a, b);
        double sb = speed_direct(bun, a, b, Side::Goal);
        Vec gb = time_gradient(bun, b, a, d, d);
        b -= beta * sb * sb * gb;
        b = env.clip_to_bounds(b);
        side_a.push_back(a);
        side_b.push_back(b);

        double dist = (a - b).norm();
        path.pair_distance.push_back(dist);
        if (dist < d_goal) {
          path.iterations = it + 1;
          proximity = true;
          break;
        }
        if (dist < best_dist - 1e-12) {
          best_dist = dist;
          since_best = 0;
        } else if (++since_best >= stall_window) {
          path.iterations = it + 1;
          break;
        }
      }
      if (!proximity && path.iterations == 0) path.iterations = max_iters;
    } catch (const ad::NonFiniteError&) {
      proximity = false;
    }
  }
  path.plan_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  path.waypoints = side_a;
  path.waypoints.insert(path.waypoints.end(), side_b.rbegin(), side_b.rend());
  path.length = polyline_length(path.waypoints);

  if (proximity) {
    PathCheck check = validate_path(env, path);
    path.safe_margin = check.margin;
    path.success = check.valid;
  } else {
    path.safe_margin = std::numeric_limits<double>::quiet_NaN();
    path.success = false;
  }
  return path;
}

PathCheck validate_path(const Environment& env, const Path& path, double check_step) {
  if (path.waypoints.empty()) {
    throw std::invalid_argument("validate_path: path has no waypoints");
  }
  if (check_step <= 0.0) check_step = env.d_min / 2.0;

  PathCheck out;
  out.valid = true;
  out.margin = std::numeric_limits<double>::infinity();

  auto visit = [&](const Vec& q) {
    double c = env.clearance(q);
    if (c < out.margin) out.margin = c;
    if (c <= 0.0) out.valid = false;
  };

  visit(path.waypoints.front());
  for (std::size_t i = 1; i < path.waypoints.size(); ++i) {
    const Vec& p0 = path.waypoints[i - 1];
    const Vec& p1 = path.waypoints[i];
    double seg = (p1 - p0).norm();
    int steps = std::max(1, static_cast<int>(std::ceil(seg / check_step)));
    for (int k = 1; k <= steps; ++k) {
      visit(p0 + (static_cast<double>(k) / steps) * (p1 - p0));
    }
  }
  return out;
}

EvalSummary evaluate(FieldNet& net, const Environment& env, const Dataset& data, double beta,
                     double d_goal, long max_iters) {
  const int d = env.dims;
  EvalSummary s;
  s.rows.reserve(static_cast<std::size_t>(data.count()));
  for (Eigen::Index i = 0; i < data.count(); ++i) {
    Vec qs = data.pairs.row(i).head(d).transpose();
    Vec qg = data.pairs.row(i).tail(d).transpose();
    Path p = plan(net, env, qs, qg, beta, d_goal, max_iters);
    EvalRow row;
    row.time = p.plan_seconds;
    row.length = p.length;
    row.margin = p.safe_margin;
    row.success = p.success;
    s.rows.push_back(row);
  }

  auto mean_std = [](const std::vector<double>& xs, double& mean, double& stdev) {
    mean = 0.0;
    stdev = 0.0;
    if (xs.empty()) return;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    for (double x : xs) stdev += (x - mean) * (x - mean);
    stdev = std::sqrt(stdev / static_cast<double>(xs.size()));
  };

  std::vector<double> times, lengths, margins;
  int ok = 0;
  for (const auto& r : s.rows) {
    times.push_back(r.time);
    if (r.success) {
      ++ok;
      lengths.push_back(r.length);
      margins.push_back(r.margin);
    }
  }
  mean_std(times, s.mean_time, s.std_time);
  mean_std(lengths, s.mean_length, s.std_length);
  mean_std(margins, s.mean_margin, s.std_margin);
  s.success_rate = s.rows.empty() ? 0.0 : 100.0 * ok / static_cast<double>(s.rows.size());
  return s;
}

void write_metrics_csv(const EvalSummary& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path);
  out << "time,length,margin,success\n";
  out.precision(17);
  for (const auto& r : summary.rows) {
    out << r.time << ',' << r.length << ',' << r.margin << ',' << (r.success ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing metrics file: " + path);
}

void write_waypoints_csv(const Path& path, const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write waypoints file: " + out_path);
  out.precision(17);
  if (!path.waypoints.empty()) {
    for (Eigen::Index i = 0; i < path.waypoints.front().size(); ++i) {
      if (i) out << ',';
      out << 'x' << i;
    }
    out << '\n';
  }
  for (const auto& w : path.waypoints) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (i) out << ',';
      out << w[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing waypoints file: " + out_path);
}

FmmQueryResult fmm_plan_query(const Environment& env, const Grid& speed, const Vec& q_s,
                              const Vec& q_g) {
  FmmQueryResult res;
  const auto t0 = std::chrono::steady_clock::now();
  Grid times = fmm_solve(speed, q_g);
  DescentResult desc = descend_time(times, q_s, q_g);
  res.solve_descend_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!desc.converged) return res;

  Path p;
  p.waypoints = desc.points;
  p.waypoints.push_back(q_g);
  p.length = polyline_length(p.waypoints);
  PathCheck check = validate_path(env, p);
  res.success = check.valid;
  res.length = p.length;
  res.margin = check.margin;
  return res;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double h = p * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

FmmCompareReport fmm_compare(FieldNet& net, const Environment& env, int n_sources, int resolution,
                             std::uint64_t seed) {
  if (n_sources < 1) throw std::invalid_argument("fmm_compare: need at least one source");
  if (!net.has_env(env.id)) net.add_env(env);
  const int d = env.dims;

  Grid speed = rasterize_speed(env, resolution);
  Rng rng(mix_seed(seed, 0x666d6d63u, 0));

  // All grid node positions, flat order, plus their free-space mask.
  const Eigen::Index n = speed.size();
  Mat nodes(d, n);
  std::vector<char> free_node(static_cast<std::size_t>(n), 0);
  {
    std::vector<int> idx(d, 0);
    Vec q(d);
    for (Eigen::Index f = 0; f < n; ++f) {
      for (int i = 0; i < d; ++i) q[i] = speed.bounds(i, 0) + idx[i] * speed.spacing(i);
      nodes.col(f) = q;
      free_node[static_cast<std::size_t>(f)] = env.clearance(q) > 0.0 ? 1 : 0;
      for (int i = d - 1; i >= 0; --i) {
        if (++idx[i] < resolution) break;
        idx[i] = 0;
      }
    }
  }

  ad::Evaluator& ev = net.evaluator(env.id);
  const ad::Block block{0, 2 * d};

  FmmCompareReport report;
  std::vector<double> pooled;
  for (int s = 0; s < n_sources; ++s) {
    // Draw a free source and snap it to its grid node; reject draws whose
    // snapped node sits inside an obstacle so both fields share the start.
    Vec src(d);
    bool ok = false;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      for (int i = 0; i < d; ++i) src[i] = rng.uniform(env.bounds(i, 0), env.bounds(i, 1));
      if (env.clearance(src) <= 0.0) continue;
      src = speed.node_pos(speed.nearest_node(src));
      if (env.clearance(src) > 0.0) {
        ok = true;
        break;
      }
    }
    if (!ok) throw std::runtime_error("fmm_compare: could not draw a free source point");

    Grid times = fmm_solve(speed, src);

    std::vector<double> errs;
    errs.reserve(static_cast<std::size_t>(n));
    const Eigen::Index chunk = 512;
    Mat X(2 * d, chunk);
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(chunk));
    Eigen::Index filled = 0;
    auto flush = [&]() {
      if (filled == 0) return;
      ev.forward(X.leftCols(filled), block, ad::DiffMode::Value);
      for (Eigen::Index j = 0; j < filled; ++j) {
        const Eigen::Index f = cols[static_cast<std::size_t>(j)];
        double dist = (nodes.col(f) - src).norm();
        double t_net = dist / ev.value(static_cast<int>(j));
        double t_fmm = times.values[f];
        errs.push_back(std::abs(t_net - t_fmm) / t_fmm);
      }
      filled = 0;
    };
    for (Eigen::Index f = 0; f < n; ++f) {
      if (!free_node[static_cast<std::size_t>(f)]) continue;
      double t_fmm = times.values[f];
      if (!std::isfinite(t_fmm) || t_fmm <= 1e-12) continue;  // source node or unreached
      X.col(filled).head(d) = src;
      X.col(filled).tail(d) = nodes.col(f);
      cols[static_cast<std::size_t>(filled)] = f;
      if (++filled == chunk) flush();
    }
    flush();

    FieldErrorStats stats;
    stats.source = src;
    stats.cells = errs.size();
    std::sort(errs.begin(), errs.end());
    stats.median = quantile_sorted(errs, 0.5);
    stats.p90 = quantile_sorted(errs, 0.9);
    report.per_source.push_back(stats);
    pooled.insert(pooled.end(), errs.begin(), errs.end());
  }

  std::sort(pooled.begin(), pooled.end());
  report.cells = pooled.size();
  report.median = quantile_sorted(pooled, 0.5);
  report.p90 = quantile_sorted(pooled, 0.9);
  return report;
}

}  // namespace eikfield
