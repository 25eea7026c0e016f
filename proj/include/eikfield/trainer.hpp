#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "eikfield/field_net.hpp"

namespace eikfield {

struct TrainConfig {
  double lr = 1e-3;
  double wd = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 256;
  double eps = 0.01;  // laplacian smoothing coefficient in the speed readout
  double eta = 1.5;   // epoch loss ratio above which the epoch is retried
  int retry_cap = 5;

  // Relaxation schedule: hold alpha_init for warmup_epochs, then climb by
  // ramp1 per epoch until switch_epoch and by ramp2 afterwards, saturating
  // at alpha_final.
  double alpha_init = 0.5;
  double alpha_final = 1.05;
  int warmup_epochs = 1000;
  double ramp1 = 1.0 / 4000.0;
  double ramp2 = 1.0 / 8000.0;
  int switch_epoch = 4000;

  bool ratio_loss = true;  // false selects the relative-L1 ablation loss
  int chunk = 64;          // samples per evaluator call
  std::uint64_t seed = 0;

  // Test hook: lets a harness distort the epoch loss seen by the retry
  // guard without touching the optimization itself.
  std::function<double(int epoch, double loss)> loss_tap;

  void validate() const;
};

double alpha_at(const TrainConfig& cfg, int epoch);

struct EpochReport {
  int epoch = 0;
  double alpha = 0.0;
  double loss = 0.0;   // mean per-sample loss over the epoch
  int reshuffles = 0;  // retries consumed by the guard this epoch
  double seconds = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string msg, std::vector<EpochReport> hist)
      : std::runtime_error(std::move(msg)), history(std::move(hist)) {}
  std::vector<EpochReport> history;
};

// Decoupled-weight-decay Adam over a ParamStore.
class AdamW {
 public:
  AdamW(const ad::ParamStore& store, const TrainConfig& cfg);
  void step(ad::ParamStore& params, const ad::ParamTape& grads);
  long steps_taken() const { return t_; }

  // Snapshot/restore for the epoch retry guard; moments travel with the
  // parameters so a restored epoch replays from identical optimizer state.
  struct State {
    long t = 0;
    std::vector<Mat> mw, vw;
    std::vector<Vec> mb, vb;
  };
  State snapshot() const;
  void restore(const State& s);

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
};

// One training run binding a net to a single environment and dataset.
// Epochs are deterministic given cfg.seed: batch order, retry reshuffles and
// reduction order are all fixed.
class TrainRun {
 public:
  TrainRun(FieldNet& net, const Environment& env, const Dataset& data, TrainConfig cfg);

  EpochReport run_epoch(int epoch);

  // Runs epochs 1..epochs inclusive; stops early when `stop` returns true. Reports
  // accumulate in order; on divergence a TrainingDiverged carrying the
  // reports so far is thrown.
  std::vector<EpochReport> drive(int epochs,
                                 const std::function<void(const EpochReport&)>& on_epoch = {},
                                 const std::function<bool(const EpochReport&)>& stop = {});

  double prev_loss() const { return prev_loss_; }

 private:
  double sweep_once(std::uint64_t order_seed, double alpha);

  FieldNet& net_;
  const Environment& env_;
  const Dataset& data_;
  TrainConfig cfg_;
  AdamW opt_;
  std::vector<double> speed_s_, speed_g_;  // clearance-derived speeds per sample
  std::vector<int> perm_;
  double prev_loss_;
  std::vector<EpochReport> history_;
};

std::vector<Mat> snapshot_params(const ad::ParamStore& store);
std::vector<Vec> snapshot_biases(const ad::ParamStore& store);
void restore_params(ad::ParamStore& store, const std::vector<Mat>& w, const std::vector<Vec>& b);

}  // namespace eikfield
