#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikfield/program.hpp"

namespace eikfield::ad {

// Derivatives are taken with respect to a contiguous window of the input
// vector: directions lo, lo+1, ..., lo+len-1. A network over stacked
// coordinates [q_s, q_g] can then be differentiated against either endpoint
// or both.
struct Block {
  int lo = 0;
  int len = 0;
};

enum class DiffMode : std::uint8_t { Value, Grad, GradHess };

// Value, gradient, and the diagonal of the Hessian for one sample, laid out
// over the derivative block (hess is empty unless the forward pass ran in
// GradHess mode; grad is empty in Value mode).
struct DiffBundle {
  double value = 0.0;
  Vec grad;
  Vec hess;

  double laplacian() const { return hess.sum(); }
};

// Adjoint seeds for a scalar loss: dL/d(value), dL/d(grad_i), dL/d(hess_i).
struct BundleSeed {
  double value_bar = 0.0;
  Vec grad_bar;
  Vec hess_bar;
};

struct NonFiniteError : std::runtime_error {
  NonFiniteError(int op, const std::string& what) : std::runtime_error(what), op_index(op) {}
  int op_index;
};

// Gradient accumulator shaped like a ParamStore.
class ParamTape {
 public:
  explicit ParamTape(const ParamStore& store);
  void reset();
  int count() const { return static_cast<int>(weights_.size()); }
  Mat& weight(int id) { return weights_.at(id); }
  const Mat& weight(int id) const { return weights_.at(id); }
  Vec& bias(int id) { return biases_.at(id); }
  const Vec& bias(int id) const { return biases_.at(id); }
  bool all_finite() const;
  double squared_norm() const;

 private:
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

// Evaluates a Program on a chunk of samples, carrying first and second
// derivative columns forward alongside values (a truncated Taylor jet per
// direction), then optionally runs a reverse sweep through that jet
// computation to accumulate parameter gradients of a scalar loss that may
// depend on values, gradients and Hessian diagonals alike.
//
// Values are computed in their own matrices, so for a fixed parameter state
// the value path performs the identical float operations in every mode.
class Evaluator {
 public:
  Evaluator(const Program& prog, const ParamStore& params);

  // X has one column per sample, rows == program input width.
  void forward(const Eigen::Ref<const Mat>& X, Block block, DiffMode mode);

  int samples() const { return nsamp_; }
  int dirs() const { return ndir_; }
  DiffMode mode() const { return mode_; }

  double value(int s) const;
  Vec grad(int s) const;
  Vec hess(int s) const;
  DiffBundle bundle(int s) const;

  // Accumulates d(loss)/d(params) into the tape given per-sample adjoint
  // seeds. Must follow a forward() call; seeds.size() == samples(). Seed
  // gradient/hessian entries beyond the forward mode are ignored.
  void backward(const std::vector<BundleSeed>& seeds, ParamTape& tape);

  // d(value_s)/d(input column s) for every sample, one reverse sweep over the
  // value path. Column s of the result pairs with column s of the forward
  // input. Valid after forward() in any mode and independent of its
  // derivative block; parameters are not touched. For a handful of samples
  // this costs about two value passes, far below a forward jet, which is what
  // makes per-step planning queries cheap.
  Mat value_input_gradients();

 private:
  void ensure_workspace();
  void check_finite(int op_index) const;

  const Program& prog_;
  const ParamStore& params_;
  DiffMode mode_ = DiffMode::Value;
  Block block_{};
  int nsamp_ = 0;
  int ndir_ = 0;

  std::vector<Mat> v_, d_, h_;     // per-slot value/derivative/second-derivative
  std::vector<Mat> va_, da_, ha_;  // adjoints
  std::vector<Eigen::ArrayXXd> mask_;  // Max/Min routing, 1.0 where the first argument won
};

struct LossSeeds {
  double loss = 0.0;
  std::vector<BundleSeed> seeds;
};

DiffBundle value_grad(const Program& prog, const ParamStore& params, const Vec& x, Block block);
DiffBundle value_grad_laplacian(const Program& prog, const ParamStore& params, const Vec& x,
                                Block block);

// One-call wrapper: forward in `mode`, apply `loss` to the evaluated bundles,
// reverse-sweep its seeds into `tape`. Returns the loss value.
double param_grad(const Program& prog, const ParamStore& params, const Eigen::Ref<const Mat>& X,
                  Block block, DiffMode mode,
                  const std::function<LossSeeds(const Evaluator&)>& loss, ParamTape& tape);

}  // namespace eikfield::ad
