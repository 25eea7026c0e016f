#include "eikfield/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "eikfield/losses.hpp"
#include "eikfield/rng.hpp"

namespace eikfield {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (wd < 0.0) throw std::invalid_argument("train config: wd must be >= 0");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (eps < 0.0) throw std::invalid_argument("train config: epsilon must be >= 0");
  if (!(eta > 1.0)) throw std::invalid_argument("train config: eta must be > 1");
  if (retry_cap < 0) throw std::invalid_argument("train config: retry cap must be >= 0");
  if (warmup_epochs < 0 || switch_epoch < warmup_epochs) {
    throw std::invalid_argument("train config: schedule epochs out of order");
  }
  if (!(alpha_final >= alpha_init)) {
    throw std::invalid_argument("train config: alpha_final must be >= alpha_init");
  }
  if (chunk < 1) throw std::invalid_argument("train config: chunk must be >= 1");
}

double alpha_at(const TrainConfig& cfg, int epoch) {
  if (epoch < cfg.warmup_epochs) return cfg.alpha_init;
  double a = cfg.alpha_init + cfg.ramp1 * (std::min(epoch, cfg.switch_epoch) - cfg.warmup_epochs) +
             cfg.ramp2 * std::max(0, epoch - cfg.switch_epoch);
  return std::min(a, cfg.alpha_final);
}

AdamW::AdamW(const ad::ParamStore& store, const TrainConfig& cfg)
    : lr_(cfg.lr), wd_(cfg.wd), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps) {
  for (int i = 0; i < store.count(); ++i) {
    mw_.push_back(Mat::Zero(store.weight(i).rows(), store.weight(i).cols()));
    vw_.push_back(Mat::Zero(store.weight(i).rows(), store.weight(i).cols()));
    mb_.push_back(Vec::Zero(store.bias(i).size()));
    vb_.push_back(Vec::Zero(store.bias(i).size()));
  }
}

void AdamW::step(ad::ParamStore& params, const ad::ParamTape& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < params.count(); ++i) {
    {
      const auto g = grads.weight(i).array();
      auto m = mw_[i].array();
      auto v = vw_[i].array();
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.square();
      auto p = params.weight(i).array();
      p -= lr_ * (m / bc1) / ((v / bc2).sqrt() + eps_) + lr_ * wd_ * p;
    }
    {
      const auto g = grads.bias(i).array();
      auto m = mb_[i].array();
      auto v = vb_[i].array();
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.square();
      auto p = params.bias(i).array();
      p -= lr_ * (m / bc1) / ((v / bc2).sqrt() + eps_) + lr_ * wd_ * p;
    }
  }
}

AdamW::State AdamW::snapshot() const { return State{t_, mw_, vw_, mb_, vb_}; }

void AdamW::restore(const State& s) {
  t_ = s.t;
  mw_ = s.mw;
  vw_ = s.vw;
  mb_ = s.mb;
  vb_ = s.vb;
}

std::vector<Mat> snapshot_params(const ad::ParamStore& store) {
  std::vector<Mat> w;
  for (int i = 0; i < store.count(); ++i) w.push_back(store.weight(i));
  return w;
}

std::vector<Vec> snapshot_biases(const ad::ParamStore& store) {
  std::vector<Vec> b;
  for (int i = 0; i < store.count(); ++i) b.push_back(store.bias(i));
  return b;
}

void restore_params(ad::ParamStore& store, const std::vector<Mat>& w, const std::vector<Vec>& b) {
  for (int i = 0; i < store.count(); ++i) {
    store.weight(i) = w[static_cast<std::size_t>(i)];
    store.bias(i) = b[static_cast<std::size_t>(i)];
  }
}

TrainRun::TrainRun(FieldNet& net, const Environment& env, const Dataset& data, TrainConfig cfg)
    : net_(net),
      env_(env),
      data_(data),
      cfg_(std::move(cfg)),
      opt_(net.params(), cfg_),
      prev_loss_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
  if (data_.dims != env_.dims) {
    throw std::invalid_argument("trainer: dataset dimension does not match environment");
  }
  if (data_.count() < 1) throw std::invalid_argument("trainer: dataset is empty");
  if (!net_.has_env(env_.id)) net_.add_env(env_);

  // Obstacle clearances never change during a run, so the speed targets are
  // cached up front; the relaxation only rescales them per epoch.
  const int d = env_.dims;
  speed_s_.resize(static_cast<std::size_t>(data_.count()));
  speed_g_.resize(static_cast<std::size_t>(data_.count()));
  for (Eigen::Index i = 0; i < data_.count(); ++i) {
    speed_s_[static_cast<std::size_t>(i)] = env_.speed(data_.pairs.row(i).head(d).transpose());
    speed_g_[static_cast<std::size_t>(i)] = env_.speed(data_.pairs.row(i).tail(d).transpose());
  }
  perm_.resize(static_cast<std::size_t>(data_.count()));
}

double TrainRun::sweep_once(std::uint64_t order_seed, double alpha) {
  const int d = env_.dims;
  const Eigen::Index n = data_.count();
  const ad::DiffMode mode = cfg_.eps > 0.0 ? ad::DiffMode::GradHess : ad::DiffMode::Grad;
  const ad::Block block{0, 2 * d};

  std::iota(perm_.begin(), perm_.end(), 0);
  Rng rng(order_seed);
  rng.shuffle(perm_);

  ad::Evaluator& ev = net_.evaluator(env_.id);
  ad::ParamTape tape(net_.params());

  Mat X(2 * d, std::min<Eigen::Index>(cfg_.chunk, n));
  std::vector<ad::BundleSeed> seeds;
  Vec qs(d), qg(d);

  double total = 0.0;
  for (Eigen::Index b0 = 0; b0 < n; b0 += cfg_.batch) {
    const Eigen::Index bn = std::min<Eigen::Index>(cfg_.batch, n - b0);
    tape.reset();
    double batch_sum = 0.0;
    for (Eigen::Index c0 = 0; c0 < bn; c0 += cfg_.chunk) {
      const Eigen::Index cn = std::min<Eigen::Index>(cfg_.chunk, bn - c0);
      X.resize(2 * d, cn);
      for (Eigen::Index s = 0; s < cn; ++s) {
        X.col(s) = data_.pairs.row(perm_[static_cast<std::size_t>(b0 + c0 + s)]).transpose();
      }
      ev.forward(X, block, mode);
      seeds.assign(static_cast<std::size_t>(cn), ad::BundleSeed{});
      const double scale = 1.0 / static_cast<double>(bn);
      for (Eigen::Index s = 0; s < cn; ++s) {
        const int idx = perm_[static_cast<std::size_t>(b0 + c0 + s)];
        qs = X.col(s).head(d);
        qg = X.col(s).tail(d);
        ad::DiffBundle bundle = ev.bundle(static_cast<int>(s));
        double ss, sg;
        if (cfg_.eps > 0.0) {
          ss = speed_viscous(bundle, qs, qg, Side::Start, cfg_.eps);
          sg = speed_viscous(bundle, qs, qg, Side::Goal, cfg_.eps);
        } else {
          ss = speed_direct(bundle, qs, qg, Side::Start);
          sg = speed_direct(bundle, qs, qg, Side::Goal);
        }
        const double ts = (1.0 - alpha) + alpha * speed_s_[static_cast<std::size_t>(idx)];
        const double tg = (1.0 - alpha) + alpha * speed_g_[static_cast<std::size_t>(idx)];
        const LossTerms lt = cfg_.ratio_loss ? speed_match_loss(ss, sg, ts, tg)
                                             : relative_l1_loss(ss, sg, ts, tg);
        batch_sum += lt.value;
        ad::BundleSeed& seed = seeds[static_cast<std::size_t>(s)];
        if (cfg_.eps > 0.0) {
          speed_viscous_adjoint(bundle, qs, qg, Side::Start, cfg_.eps, lt.ds_start * scale, seed);
          speed_viscous_adjoint(bundle, qs, qg, Side::Goal, cfg_.eps, lt.ds_goal * scale, seed);
        } else {
          speed_direct_adjoint(bundle, qs, qg, Side::Start, lt.ds_start * scale, seed);
          speed_direct_adjoint(bundle, qs, qg, Side::Goal, lt.ds_goal * scale, seed);
        }
      }
      ev.backward(seeds, tape);
    }
    if (!tape.all_finite()) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    opt_.step(net_.params(), tape);
    total += batch_sum;
  }
  return total / static_cast<double>(n);
}

EpochReport TrainRun::run_epoch(int epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  EpochReport rep;
  rep.epoch = epoch;
  rep.alpha = alpha_at(cfg_, epoch);

  const std::vector<Mat> snap_w = snapshot_params(net_.params());
  const std::vector<Vec> snap_b = snapshot_biases(net_.params());
  const AdamW::State snap_opt = opt_.snapshot();

  for (int attempt = 0;; ++attempt) {
    double loss = std::numeric_limits<double>::quiet_NaN();
    try {
      loss = sweep_once(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(attempt)),
                        rep.alpha);
    } catch (const ad::NonFiniteError&) {
      // treated exactly like a guard trip: restore and reshuffle
    }
    if (cfg_.loss_tap) loss = cfg_.loss_tap(epoch, loss);
    const bool tripped = !std::isfinite(loss) ||
                         (std::isfinite(prev_loss_) && loss > cfg_.eta * prev_loss_);
    if (!tripped) {
      rep.loss = loss;
      prev_loss_ = loss;
      break;
    }
    restore_params(net_.params(), snap_w, snap_b);
    opt_.restore(snap_opt);
    if (attempt >= cfg_.retry_cap) {
      rep.reshuffles = attempt + 1;
      std::vector<EpochReport> hist = history_;
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + " after " +
                                 std::to_string(attempt + 1) + " restarts",
                             std::move(hist));
    }
    rep.reshuffles = attempt + 1;
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  history_.push_back(rep);
  return rep;
}

std::vector<EpochReport> TrainRun::drive(int epochs,
                                         const std::function<void(const EpochReport&)>& on_epoch,
                                         const std::function<bool(const EpochReport&)>& stop) {
  for (int e = 1; e <= epochs; ++e) {
    EpochReport rep = run_epoch(e);
    if (on_epoch) on_epoch(rep);
    if (stop && stop(rep)) break;
  }
  return history_;
}

}  // namespace eikfield
