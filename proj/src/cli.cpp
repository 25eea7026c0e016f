#include "eikfield/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eikfield/environment.hpp"
#include "eikfield/field_net.hpp"
#include "eikfield/fmm.hpp"
#include "eikfield/planner.hpp"
#include "eikfield/rng.hpp"
#include "eikfield/trainer.hpp"

namespace eikfield {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Vec parse_vec(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
    if (used != tok.size()) throw CLI::ValidationError("expected comma-separated numbers, got '" + text + "'");
    vals.push_back(v);
  }
  if (vals.empty()) throw CLI::ValidationError("expected comma-separated numbers, got '" + text + "'");
  Vec q(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) q[static_cast<Eigen::Index>(i)] = vals[i];
  return q;
}

json vec_json(const Vec& q) {
  json a = json::array();
  for (Eigen::Index i = 0; i < q.size(); ++i) a.push_back(q[i]);
  return a;
}

// Lets any command be replayed from the manifest it echoed: values from a
// --manifest file stand in for flags the user did not pass on this run.
class ManifestBinder {
 public:
  template <typename T>
  void bind(const char* key, CLI::Option* opt, T& var) {
    entries_[key] = {opt, [&var](const json& v) { var = v.get<T>(); }};
  }

  void apply(const std::string& path) const {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("cannot open manifest file: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ValidationError("bad manifest file " + path + ": " + e.what());
    }
    for (const auto& [key, entry] : entries_) {
      if (entry.opt != nullptr && entry.opt->count() > 0) continue;
      auto it = j.find(key);
      if (it == j.end()) continue;
      try {
        entry.set(*it);
      } catch (const json::exception& e) {
        throw CLI::ValidationError("manifest key '" + key + "': " + e.what());
      }
    }
  }

 private:
  struct Entry {
    CLI::Option* opt = nullptr;
    std::function<void(const json&)> set;
  };
  std::map<std::string, Entry> entries_;
};

void write_manifest(const std::string& out_dir, const json& j) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

void require_flag(const std::string& flag, bool present) {
  if (!present) throw CLI::RequiredError(flag);
}

// ---------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::vector<std::string> envs;
  std::string out;
  std::string manifest;
  std::uint64_t seed = 0;
  std::uint64_t pairs = 1000;
  double min_sep = 0.12;  // twice the planner's default goal tolerance
  ManifestBinder binder;
};

void run_gen_data(GenDataOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.envs.empty());
  require_flag("--out", !o.out.empty());

  fs::create_directories(o.out);
  json mf;
  mf["command"] = "gen-data";
  mf["env"] = o.envs;
  mf["out"] = o.out;
  mf["seed"] = o.seed;
  mf["pairs"] = o.pairs;
  mf["min-sep"] = o.min_sep;

  for (const std::string& env_path : o.envs) {
    Environment env = load_environment(env_path);
    const std::uint64_t env_seed = mix_seed(o.seed, static_cast<std::uint64_t>(env.id), 0x70617273ull);

    // Free-space acceptance estimate over a fixed probe batch.
    Rng probe(mix_seed(env_seed, 0, 1));
    int free_hits = 0;
    const int probe_n = 2000;
    Vec q(env.dims);
    for (int i = 0; i < probe_n; ++i) {
      for (int k = 0; k < env.dims; ++k) q[k] = probe.uniform(env.bounds(k, 0), env.bounds(k, 1));
      if (env.clearance(q) > 0.0) ++free_hits;
    }

    Dataset ds;
    try {
      ds = sample_pairs(env, static_cast<Eigen::Index>(o.pairs), env_seed, o.min_sep);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("env " + std::to_string(env.id) + " (" + env_path + "): " + e.what());
    }
    const std::string out_path = (fs::path(o.out) / (fs::path(env_path).stem().string() + ".epds")).string();
    save_dataset(ds, out_path);
    std::cout << "env " << env.id << ": " << ds.count() << " pairs -> " << out_path
              << "  (free-space acceptance " << 100.0 * free_hits / probe_n << "%)\n";
  }
  write_manifest(o.out, mf);
}

// ------------------------------------------------------------------- train

struct TrainOpts {
  std::string env, dataset, checkpoint, out, manifest, loss = "ratio";
  int epochs = 0;
  int hidden = 128, blocks = 5;
  int warmup = 1000, switch_epoch = 4000;
  double ramp1 = 1.0 / 4000.0, ramp2 = 1.0 / 8000.0;
  double alpha_init = 0.5, alpha_final = 1.05;
  double eta = 1.5, epsilon = 0.01, lr = 1e-3, wd = 0.1;
  int batch = 256;
  std::uint64_t seed = 0;
  int ckpt_every = 0;
  bool full_epochs = false;
  ManifestBinder binder;
};

json train_manifest(const TrainOpts& o) {
  json mf;
  mf["command"] = "train";
  mf["env"] = o.env;
  mf["dataset"] = o.dataset;
  if (!o.checkpoint.empty()) mf["checkpoint"] = o.checkpoint;
  mf["out"] = o.out;
  mf["epochs"] = o.epochs;
  mf["hidden"] = o.hidden;
  mf["blocks"] = o.blocks;
  mf["alpha-init"] = o.alpha_init;
  mf["alpha-final"] = o.alpha_final;
  mf["warmup"] = o.warmup;
  mf["ramp1"] = o.ramp1;
  mf["ramp2"] = o.ramp2;
  mf["switch-epoch"] = o.switch_epoch;
  mf["eta"] = o.eta;
  mf["epsilon"] = o.epsilon;
  mf["lr"] = o.lr;
  mf["wd"] = o.wd;
  mf["batch"] = o.batch;
  mf["seed"] = o.seed;
  mf["loss"] = o.loss;
  mf["ckpt-every"] = o.ckpt_every;
  mf["full-epochs"] = o.full_epochs;
  return mf;
}

void run_train(TrainOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.env.empty());
  require_flag("--dataset", !o.dataset.empty());
  require_flag("--out", !o.out.empty());
  require_flag("--epochs", o.epochs > 0);
  if (o.loss != "ratio" && o.loss != "rel-l1")
    throw CLI::ValidationError("--loss must be 'ratio' or 'rel-l1'");

  Environment env = load_environment(o.env);
  Dataset data = load_dataset(o.dataset);
  if (data.dims != env.dims)
    throw std::invalid_argument("dataset dims " + std::to_string(data.dims) +
                                " do not match env dims " + std::to_string(env.dims));

  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.wd = o.wd;
  cfg.batch = o.batch;
  cfg.eps = o.epsilon;
  cfg.eta = o.eta;
  cfg.alpha_init = o.alpha_init;
  cfg.alpha_final = o.alpha_final;
  cfg.warmup_epochs = o.warmup;
  cfg.ramp1 = o.ramp1;
  cfg.ramp2 = o.ramp2;
  cfg.switch_epoch = o.switch_epoch;
  cfg.ratio_loss = (o.loss == "ratio");
  cfg.seed = o.seed;
  cfg.validate();

  FieldNet net = o.checkpoint.empty() ? FieldNet(env.dims, o.hidden, o.blocks, env.fourier_h)
                                      : FieldNet::load(o.checkpoint);
  if (o.checkpoint.empty()) net.init_params(o.seed);

  fs::create_directories(o.out);
  write_manifest(o.out, train_manifest(o));
  const std::string ckpt_path = (fs::path(o.out) / "checkpoint.epnn").string();
  const std::string log_path = (fs::path(o.out) / "train_log.jsonl").string();
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write training log: " + log_path);

  auto on_epoch = [&](const EpochReport& r) {
    json line;
    line["epoch"] = r.epoch;
    line["alpha"] = r.alpha;
    line["loss"] = r.loss;
    line["reshuffles"] = r.reshuffles;
    line["seconds"] = r.seconds;
    log << line.dump() << '\n';
    log.flush();
    if (o.ckpt_every > 0 && r.epoch % o.ckpt_every == 0) net.save(ckpt_path);
  };
  auto stop = [&](const EpochReport& r) {
    return !o.full_epochs && cfg.alpha_final > cfg.alpha_init && r.alpha >= cfg.alpha_final;
  };

  TrainRun run(net, env, data, cfg);
  std::vector<EpochReport> reports;
  try {
    reports = run.drive(o.epochs, on_epoch, stop);
  } catch (const TrainingDiverged&) {
    // params were already rolled back to the last accepted epoch
    net.save(ckpt_path);
    throw;
  }
  net.save(ckpt_path);
  if (reports.empty()) {
    std::cout << "no epochs run\n";
    return;
  }
  const EpochReport& last = reports.back();
  std::cout << "epoch " << last.epoch << ": alpha=" << last.alpha << " loss=" << last.loss
            << " reshuffles=" << last.reshuffles << " seconds=" << last.seconds << '\n'
            << "checkpoint -> " << ckpt_path << '\n';
}

// -------------------------------------------------------------------- plan

struct PlanOpts {
  std::string env, checkpoint, out, manifest, start, goal;
  double beta = 0.03, dgoal = 0.06;
  long max_iters = 0;
  ManifestBinder binder;
};

FieldNet load_net_for_env(const std::string& path, const Environment& env) {
  FieldNet net = FieldNet::load(path);
  if (net.dims() != env.dims)
    throw std::invalid_argument("checkpoint is " + std::to_string(net.dims()) + "D but env " +
                                std::to_string(env.id) + " is " + std::to_string(env.dims) + "D");
  if (!net.has_env(env.id))
    throw std::invalid_argument("checkpoint has no code for env id " + std::to_string(env.id));
  if (!net.code_matches(env))
    throw std::invalid_argument("env " + std::to_string(env.id) +
                                " carries a different code than the checkpoint was trained with");
  return net;
}

void run_plan(PlanOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.env.empty());
  require_flag("--checkpoint", !o.checkpoint.empty());
  require_flag("--start", !o.start.empty());
  require_flag("--goal", !o.goal.empty());

  Environment env = load_environment(o.env);
  FieldNet net = load_net_for_env(o.checkpoint, env);
  Vec q_s = parse_vec(o.start);
  Vec q_g = parse_vec(o.goal);
  if (q_s.size() != env.dims || q_g.size() != env.dims)
    throw CLI::ValidationError("--start/--goal must have " + std::to_string(env.dims) + " coordinates");

  Path path = plan(net, env, q_s, q_g, o.beta, o.dgoal, o.max_iters);
  std::cout << "time=" << path.plan_seconds << " length=" << path.length
            << " margin=" << path.safe_margin << " success=" << (path.success ? 1 : 0)
            << " iterations=" << path.iterations << '\n';

  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_waypoints_csv(path, (fs::path(o.out) / "waypoints.csv").string());
    json mf;
    mf["command"] = "plan";
    mf["env"] = o.env;
    mf["checkpoint"] = o.checkpoint;
    mf["out"] = o.out;
    mf["start"] = o.start;
    mf["goal"] = o.goal;
    mf["beta"] = o.beta;
    mf["dgoal"] = o.dgoal;
    mf["max-iters"] = o.max_iters;
    write_manifest(o.out, mf);
  }
}

// -------------------------------------------------------------------- eval

struct EvalOpts {
  std::string env, checkpoint, dataset, out, manifest;
  double beta = 0.03, dgoal = 0.06;
  long max_iters = 0;
  bool fmm = false;
  int resolution = 128;
  ManifestBinder binder;
};

void run_eval(EvalOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.env.empty());
  require_flag("--checkpoint", !o.checkpoint.empty());
  require_flag("--dataset", !o.dataset.empty());
  require_flag("--out", !o.out.empty());

  Environment env = load_environment(o.env);
  FieldNet net = load_net_for_env(o.checkpoint, env);
  Dataset data = load_dataset(o.dataset);
  if (data.dims != env.dims)
    throw std::invalid_argument("dataset dims do not match env dims");

  fs::create_directories(o.out);
  EvalSummary summary = evaluate(net, env, data, o.beta, o.dgoal, o.max_iters);
  write_metrics_csv(summary, (fs::path(o.out) / "metrics.csv").string());
  std::cout << "planner: success_rate=" << summary.success_rate << "% mean_time=" << summary.mean_time
            << "s mean_length=" << summary.mean_length << " mean_margin=" << summary.mean_margin
            << '\n';

  if (o.fmm) {
    Grid speed = rasterize_speed(env, o.resolution);
    EvalSummary base;
    base.rows.reserve(static_cast<std::size_t>(data.count()));
    for (Eigen::Index i = 0; i < data.count(); ++i) {
      Vec q_s = data.pairs.row(i).head(env.dims).transpose();
      Vec q_g = data.pairs.row(i).tail(env.dims).transpose();
      FmmQueryResult r = fmm_plan_query(env, speed, q_s, q_g);
      EvalRow row;
      row.time = r.solve_descend_seconds;
      row.length = r.length;
      row.margin = r.margin;
      row.success = r.success;
      base.rows.push_back(row);
    }
    double t = 0, n_succ = 0, len = 0, mar = 0;
    for (const EvalRow& r : base.rows) {
      t += r.time;
      if (r.success) {
        n_succ += 1;
        len += r.length;
        mar += r.margin;
      }
    }
    base.mean_time = t / static_cast<double>(base.rows.size());
    base.success_rate = 100.0 * n_succ / static_cast<double>(base.rows.size());
    base.mean_length = n_succ > 0 ? len / n_succ : 0.0;
    base.mean_margin = n_succ > 0 ? mar / n_succ : 0.0;
    write_metrics_csv(base, (fs::path(o.out) / "fmm_metrics.csv").string());
    std::cout << "fmm baseline: success_rate=" << base.success_rate << "% mean_time=" << base.mean_time
              << "s mean_length=" << base.mean_length << " mean_margin=" << base.mean_margin << '\n';
  }

  json mf;
  mf["command"] = "eval";
  mf["env"] = o.env;
  mf["checkpoint"] = o.checkpoint;
  mf["dataset"] = o.dataset;
  mf["out"] = o.out;
  mf["beta"] = o.beta;
  mf["dgoal"] = o.dgoal;
  mf["max-iters"] = o.max_iters;
  mf["fmm"] = o.fmm;
  mf["resolution"] = o.resolution;
  write_manifest(o.out, mf);
}

// ------------------------------------------------------------ field-export

struct FieldExportOpts {
  std::string env, checkpoint, out, manifest, source;
  int resolution = 128;
  bool fmm = false;
  ManifestBinder binder;
};

void write_grid_csv(const Grid& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write grid csv: " + path);
  out.precision(17);
  for (int i = 0; i < g.res; ++i) {
    for (int j = 0; j < g.res; ++j) {
      if (j) out << ',';
      out << g.values[static_cast<Eigen::Index>(i) * g.res + j];
    }
    out << '\n';
  }
}

void write_grid_pgm(const Grid& g, const std::string& path) {
  double vmax = 0.0;
  for (Eigen::Index f = 0; f < g.size(); ++f)
    if (std::isfinite(g.values[f])) vmax = std::max(vmax, g.values[f]);
  if (vmax <= 0.0) vmax = 1.0;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pgm: " + path);
  // rows follow the first grid axis, columns the second
  out << "P2\n" << g.res << ' ' << g.res << "\n255\n";
  for (int i = 0; i < g.res; ++i) {
    for (int j = 0; j < g.res; ++j) {
      double v = g.values[static_cast<Eigen::Index>(i) * g.res + j];
      int pix = std::isfinite(v) ? static_cast<int>(std::lround(255.0 * v / vmax)) : 0;
      out << std::clamp(pix, 0, 255) << (j + 1 == g.res ? '\n' : ' ');
    }
  }
}

void run_field_export(FieldExportOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.env.empty());
  require_flag("--source", !o.source.empty());
  require_flag("--out", !o.out.empty());
  if (o.fmm && !o.checkpoint.empty())
    throw CLI::ValidationError("pass either --checkpoint or --fmm, not both");
  if (!o.fmm && o.checkpoint.empty())
    throw CLI::ValidationError("pass --checkpoint for the learned field or --fmm for the solver baseline");

  Environment env = load_environment(o.env);
  if (env.dims != 2)
    throw CLI::ValidationError("field-export renders 2D environments only");
  Vec src = parse_vec(o.source);
  if (src.size() != env.dims)
    throw CLI::ValidationError("--source must have " + std::to_string(env.dims) + " coordinates");

  Grid speed = rasterize_speed(env, o.resolution);
  src = speed.node_pos(speed.nearest_node(src));

  Grid times;
  if (o.fmm) {
    times = fmm_solve(speed, src);
  } else {
    FieldNet net = load_net_for_env(o.checkpoint, env);
    times = make_grid(env, o.resolution);
    ad::Evaluator& ev = net.evaluator(env.id);
    const ad::Block block{0, 2 * env.dims};
    const Eigen::Index n = times.size();
    const Eigen::Index chunk = 512;
    Mat X(2 * env.dims, chunk);
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(chunk));
    std::vector<int> idx(static_cast<std::size_t>(env.dims), 0);
    Vec q(env.dims);
    Eigen::Index filled = 0;
    auto flush = [&]() {
      if (filled == 0) return;
      ev.forward(X.leftCols(filled), block, ad::DiffMode::Value);
      for (Eigen::Index j = 0; j < filled; ++j) {
        const Eigen::Index f = cols[static_cast<std::size_t>(j)];
        double dist = (X.col(j).tail(env.dims) - src).norm();
        times.values[f] = dist / ev.value(static_cast<int>(j));
      }
      filled = 0;
    };
    for (Eigen::Index f = 0; f < n; ++f) {
      for (int i = 0; i < env.dims; ++i) q[i] = times.bounds(i, 0) + idx[i] * times.spacing(i);
      if ((q - src).norm() < 1e-12) {
        times.values[f] = 0.0;
      } else {
        X.col(filled).head(env.dims) = src;
        X.col(filled).tail(env.dims) = q;
        cols[static_cast<std::size_t>(filled)] = f;
        if (++filled == chunk) flush();
      }
      for (int i = env.dims - 1; i >= 0; --i) {
        if (++idx[i] < o.resolution) break;
        idx[i] = 0;
      }
    }
    flush();
  }

  fs::create_directories(o.out);
  write_grid_csv(times, (fs::path(o.out) / "field.csv").string());
  write_grid_pgm(times, (fs::path(o.out) / "field.pgm").string());
  save_grid(times, (fs::path(o.out) / "field.eptg").string());
  std::cout << "field grid " << o.resolution << "x" << o.resolution << " from source ("
            << src.transpose() << ") -> " << o.out << '\n';

  json mf;
  mf["command"] = "field-export";
  mf["env"] = o.env;
  if (!o.checkpoint.empty()) mf["checkpoint"] = o.checkpoint;
  mf["fmm"] = o.fmm;
  mf["source"] = o.source;
  mf["resolution"] = o.resolution;
  mf["out"] = o.out;
  write_manifest(o.out, mf);
}

// ------------------------------------------------------------- fmm-compare

struct FmmCompareOpts {
  std::string env, checkpoint, out, manifest;
  int sources = 5;
  int resolution = 128;
  std::uint64_t seed = 0;
  ManifestBinder binder;
};

void run_fmm_compare(FmmCompareOpts& o) {
  o.binder.apply(o.manifest);
  require_flag("--env", !o.env.empty());
  require_flag("--checkpoint", !o.checkpoint.empty());

  Environment env = load_environment(o.env);
  FieldNet net = load_net_for_env(o.checkpoint, env);
  FmmCompareReport rep = fmm_compare(net, env, o.sources, o.resolution, o.seed);

  for (std::size_t i = 0; i < rep.per_source.size(); ++i) {
    const FieldErrorStats& s = rep.per_source[i];
    std::cout << "source " << i << " (" << s.source.transpose() << "): cells=" << s.cells
              << " median=" << s.median << " p90=" << s.p90 << '\n';
  }
  std::cout << "pooled: cells=" << rep.cells << " median=" << rep.median << " p90=" << rep.p90
            << '\n';

  if (!o.out.empty()) {
    fs::create_directories(o.out);
    json rj;
    rj["pooled"] = {{"cells", rep.cells}, {"median", rep.median}, {"p90", rep.p90}};
    rj["per_source"] = json::array();
    for (const FieldErrorStats& s : rep.per_source)
      rj["per_source"].push_back(
          {{"source", vec_json(s.source)}, {"cells", s.cells}, {"median", s.median}, {"p90", s.p90}});
    std::ofstream rout((fs::path(o.out) / "fmm_compare.json").string());
    rout << rj.dump(2) << '\n';

    json mf;
    mf["command"] = "fmm-compare";
    mf["env"] = o.env;
    mf["checkpoint"] = o.checkpoint;
    mf["sources"] = o.sources;
    mf["resolution"] = o.resolution;
    mf["seed"] = o.seed;
    mf["out"] = o.out;
    write_manifest(o.out, mf);
  }
}

// ----------------------------------------------------------------- wiring

void setup_gen_data(CLI::App& app, GenDataOpts& o) {
  CLI::App* cmd = app.add_subcommand("gen-data", "Sample collision-free start/goal pair datasets");
  auto* env = cmd->add_option("--env", o.envs, "Environment JSON file(s)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  auto* seed = cmd->add_option("--seed", o.seed, "Sampling seed");
  auto* pairs = cmd->add_option("--pairs", o.pairs, "Pairs per environment");
  auto* msep = cmd->add_option("--min-sep", o.min_sep, "Minimum start/goal separation");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.envs);
  o.binder.bind("out", out, o.out);
  o.binder.bind("seed", seed, o.seed);
  o.binder.bind("pairs", pairs, o.pairs);
  o.binder.bind("min-sep", msep, o.min_sep);
  cmd->callback([&o]() { run_gen_data(o); });
}

void setup_train(CLI::App& app, TrainOpts& o) {
  CLI::App* cmd = app.add_subcommand("train", "Fit the arrival-time field to an environment");
  auto* env = cmd->add_option("--env", o.env, "Environment JSON file");
  auto* dataset = cmd->add_option("--dataset", o.dataset, "Pair dataset (.epds)");
  auto* ckpt = cmd->add_option("--checkpoint", o.checkpoint, "Warm-start checkpoint (.epnn)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  auto* epochs = cmd->add_option("--epochs", o.epochs, "Epoch cap");
  auto* hidden = cmd->add_option("--hidden", o.hidden, "Hidden width");
  auto* blocks = cmd->add_option("--blocks", o.blocks, "Residual blocks per stack");
  auto* ai = cmd->add_option("--alpha-init", o.alpha_init, "Initial speed relaxation");
  auto* af = cmd->add_option("--alpha-final", o.alpha_final, "Relaxation cap");
  auto* warm = cmd->add_option("--warmup", o.warmup, "Epochs held at --alpha-init");
  auto* r1 = cmd->add_option("--ramp1", o.ramp1, "Relaxation step per epoch after warmup");
  auto* r2 = cmd->add_option("--ramp2", o.ramp2, "Relaxation step after --switch-epoch");
  auto* sw = cmd->add_option("--switch-epoch", o.switch_epoch, "Epoch where --ramp2 takes over");
  auto* eta = cmd->add_option("--eta", o.eta, "Epoch loss ratio that triggers a retry");
  auto* eps = cmd->add_option("--epsilon", o.epsilon, "Curvature smoothing weight in the speed readout");
  auto* lr = cmd->add_option("--lr", o.lr, "Learning rate");
  auto* wd = cmd->add_option("--wd", o.wd, "Decoupled weight decay");
  auto* batch = cmd->add_option("--batch", o.batch, "Batch size");
  auto* seed = cmd->add_option("--seed", o.seed, "Init/shuffle seed");
  auto* loss = cmd->add_option("--loss", o.loss, "Loss flavor: ratio | rel-l1");
  auto* ce = cmd->add_option("--ckpt-every", o.ckpt_every, "Also save every N epochs (0 = final only)");
  auto* fe = cmd->add_flag("--full-epochs", o.full_epochs, "Keep training after the relaxation cap");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.env);
  o.binder.bind("dataset", dataset, o.dataset);
  o.binder.bind("checkpoint", ckpt, o.checkpoint);
  o.binder.bind("out", out, o.out);
  o.binder.bind("epochs", epochs, o.epochs);
  o.binder.bind("hidden", hidden, o.hidden);
  o.binder.bind("blocks", blocks, o.blocks);
  o.binder.bind("alpha-init", ai, o.alpha_init);
  o.binder.bind("alpha-final", af, o.alpha_final);
  o.binder.bind("warmup", warm, o.warmup);
  o.binder.bind("ramp1", r1, o.ramp1);
  o.binder.bind("ramp2", r2, o.ramp2);
  o.binder.bind("switch-epoch", sw, o.switch_epoch);
  o.binder.bind("eta", eta, o.eta);
  o.binder.bind("epsilon", eps, o.epsilon);
  o.binder.bind("lr", lr, o.lr);
  o.binder.bind("wd", wd, o.wd);
  o.binder.bind("batch", batch, o.batch);
  o.binder.bind("seed", seed, o.seed);
  o.binder.bind("loss", loss, o.loss);
  o.binder.bind("ckpt-every", ce, o.ckpt_every);
  o.binder.bind("full-epochs", fe, o.full_epochs);
  cmd->callback([&o]() { run_train(o); });
}

void setup_plan(CLI::App& app, PlanOpts& o) {
  CLI::App* cmd = app.add_subcommand("plan", "Plan one start/goal query with a trained field");
  auto* env = cmd->add_option("--env", o.env, "Environment JSON file");
  auto* ckpt = cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint (.epnn)");
  auto* out = cmd->add_option("--out", o.out, "Optional output directory for waypoints.csv");
  auto* start = cmd->add_option("--start", o.start, "Start coordinates, comma separated");
  auto* goal = cmd->add_option("--goal", o.goal, "Goal coordinates, comma separated");
  auto* beta = cmd->add_option("--beta", o.beta, "March step scale");
  auto* dgoal = cmd->add_option("--dgoal", o.dgoal, "Endpoint distance that counts as joined");
  auto* mi = cmd->add_option("--max-iters", o.max_iters, "Iteration cap (0 = auto)");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.env);
  o.binder.bind("checkpoint", ckpt, o.checkpoint);
  o.binder.bind("out", out, o.out);
  o.binder.bind("start", start, o.start);
  o.binder.bind("goal", goal, o.goal);
  o.binder.bind("beta", beta, o.beta);
  o.binder.bind("dgoal", dgoal, o.dgoal);
  o.binder.bind("max-iters", mi, o.max_iters);
  cmd->callback([&o]() { run_plan(o); });
}

void setup_eval(CLI::App& app, EvalOpts& o) {
  CLI::App* cmd = app.add_subcommand("eval", "Plan every pair in a dataset and write metrics");
  auto* env = cmd->add_option("--env", o.env, "Environment JSON file");
  auto* ckpt = cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint (.epnn)");
  auto* dataset = cmd->add_option("--dataset", o.dataset, "Pair dataset (.epds)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  auto* beta = cmd->add_option("--beta", o.beta, "March step scale");
  auto* dgoal = cmd->add_option("--dgoal", o.dgoal, "Endpoint distance that counts as joined");
  auto* mi = cmd->add_option("--max-iters", o.max_iters, "Iteration cap (0 = auto)");
  auto* fmm = cmd->add_flag("--fmm", o.fmm, "Also run the grid-solver baseline");
  auto* res = cmd->add_option("--resolution", o.resolution, "Baseline grid resolution");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.env);
  o.binder.bind("checkpoint", ckpt, o.checkpoint);
  o.binder.bind("dataset", dataset, o.dataset);
  o.binder.bind("out", out, o.out);
  o.binder.bind("beta", beta, o.beta);
  o.binder.bind("dgoal", dgoal, o.dgoal);
  o.binder.bind("max-iters", mi, o.max_iters);
  o.binder.bind("fmm", fmm, o.fmm);
  o.binder.bind("resolution", res, o.resolution);
  cmd->callback([&o]() { run_eval(o); });
}

void setup_field_export(CLI::App& app, FieldExportOpts& o) {
  CLI::App* cmd = app.add_subcommand("field-export", "Render an arrival-time field on a grid");
  auto* env = cmd->add_option("--env", o.env, "Environment JSON file");
  auto* ckpt = cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint (.epnn)");
  auto* fmm = cmd->add_flag("--fmm", o.fmm, "Export the grid-solver field instead");
  auto* srcv = cmd->add_option("--source", o.source, "Source coordinates, comma separated");
  auto* res = cmd->add_option("--resolution", o.resolution, "Grid resolution");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.env);
  o.binder.bind("checkpoint", ckpt, o.checkpoint);
  o.binder.bind("fmm", fmm, o.fmm);
  o.binder.bind("source", srcv, o.source);
  o.binder.bind("resolution", res, o.resolution);
  o.binder.bind("out", out, o.out);
  cmd->callback([&o]() { run_field_export(o); });
}

void setup_fmm_compare(CLI::App& app, FmmCompareOpts& o) {
  CLI::App* cmd = app.add_subcommand("fmm-compare", "Relative arrival-time error of a field vs the grid solver");
  auto* env = cmd->add_option("--env", o.env, "Environment JSON file");
  auto* ckpt = cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint (.epnn)");
  auto* sources = cmd->add_option("--sources", o.sources, "Number of random sources");
  auto* res = cmd->add_option("--resolution", o.resolution, "Comparison grid resolution");
  auto* seed = cmd->add_option("--seed", o.seed, "Source sampling seed");
  auto* out = cmd->add_option("--out", o.out, "Optional output directory for the report");
  cmd->add_option("--manifest", o.manifest, "Replay flags from a manifest file");
  o.binder.bind("env", env, o.env);
  o.binder.bind("checkpoint", ckpt, o.checkpoint);
  o.binder.bind("sources", sources, o.sources);
  o.binder.bind("resolution", res, o.resolution);
  o.binder.bind("seed", seed, o.seed);
  o.binder.bind("out", out, o.out);
  cmd->callback([&o]() { run_fmm_compare(o); });
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"eikfield: learned arrival-time fields for motion planning"};
  app.require_subcommand(1);

  GenDataOpts gen_data;
  TrainOpts train;
  PlanOpts plan_opts;
  EvalOpts eval_opts;
  FieldExportOpts field_export;
  FmmCompareOpts compare;
  setup_gen_data(app, gen_data);
  setup_train(app, train);
  setup_plan(app, plan_opts);
  setup_eval(app, eval_opts);
  setup_field_export(app, field_export);
  setup_fmm_compare(app, compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ad::NonFiniteError& e) {
    std::cerr << "error: non-finite evaluation: " << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::logic_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace eikfield
