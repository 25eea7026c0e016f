#pragma once

#include <vector>

#include "eikfield/field_net.hpp"
#include "eikfield/fmm.hpp"

namespace eikfield {

struct Path {
  std::vector<Vec> waypoints;  // start-side prefix + reversed goal-side suffix
  double length = 0.0;
  double safe_margin = 0.0;
  double plan_seconds = 0.0;
  bool success = false;
  long iterations = 0;
  // Endpoint gap after each paired update; kept for convergence diagnostics.
  std::vector<double> pair_distance;
};

// Marches both endpoints toward each other down the arrival-time field. Each
// iteration applies q_s <- q_s - beta * S^2(q_s) * grad_{q_s} T, re-evaluates
// the field at the moved pair, then applies the mirrored goal-side update,
// until the endpoints come within d_goal. Speeds use the sharp readout (no
// second derivatives). max_iters == 0 picks 10 * diameter / (beta * s_min),
// rounded.
//
// A run that stops making progress for `stall_window` consecutive paired
// updates is declared failed early; the field is static, so a plateau never
// resolves itself.
//
// Success requires proximity termination and a collision-free validation
// sweep. Failed plans keep their partial polyline for diagnostics but report
// success=false and a NaN margin.
Path plan(FieldNet& net, const Environment& env, const Vec& q_s, const Vec& q_g, double beta,
          double d_goal, long max_iters = 0, int stall_window = 100);

struct PathCheck {
  bool valid = false;
  double margin = 0.0;
};

// Samples every segment at spacing <= check_step (default d_min/2 when
// check_step <= 0); valid iff all sampled clearances are positive.
PathCheck validate_path(const Environment& env, const Path& path, double check_step = 0.0);

struct EvalRow {
  double time = 0.0;
  double length = 0.0;
  double margin = 0.0;
  bool success = false;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  double mean_time = 0.0, std_time = 0.0;
  double mean_length = 0.0, std_length = 0.0;
  double mean_margin = 0.0, std_margin = 0.0;
  double success_rate = 0.0;  // percent
};

// Plans every pair in the dataset. Time statistics cover all queries;
// length/margin statistics cover successful ones.
EvalSummary evaluate(FieldNet& net, const Environment& env, const Dataset& data, double beta,
                     double d_goal, long max_iters = 0);

void write_metrics_csv(const EvalSummary& summary, const std::string& path);
void write_waypoints_csv(const Path& path, const std::string& out_path);

// Grid-marching baseline for one query: solve the arrival-time grid with the
// goal as source, then walk downhill from the start. solve_descend_seconds
// covers exactly those two stages (the speed grid is reusable across queries
// and is passed in precomputed).
struct FmmQueryResult {
  bool success = false;
  double solve_descend_seconds = 0.0;
  double length = 0.0;
  double margin = 0.0;
};

FmmQueryResult fmm_plan_query(const Environment& env, const Grid& speed, const Vec& q_s,
                              const Vec& q_g);

struct FieldErrorStats {
  Vec source;
  std::size_t cells = 0;
  double median = 0.0;
  double p90 = 0.0;
};

struct FmmCompareReport {
  std::vector<FieldErrorStats> per_source;
  // Pooled over every compared cell of every source.
  std::size_t cells = 0;
  double median = 0.0;
  double p90 = 0.0;
};

// Relative arrival-time error |T_net - T_fmm| / T_fmm between the learned
// field and the grid solver, over the free-space nodes of a res^d grid, for
// n_sources randomly drawn collision-free source points. Each source is
// snapped to its nearest grid node so both fields start from the same spot;
// the source node itself is skipped.
FmmCompareReport fmm_compare(FieldNet& net, const Environment& env, int n_sources, int resolution,
                             std::uint64_t seed);

}  // namespace eikfield
