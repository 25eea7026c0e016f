#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "eikfield/engine.hpp"
#include "eikfield/environment.hpp"

namespace eikfield {

// Factorized arrival-time model. The network predicts a strictly positive
// factor tau(q_s, q_g); travel time is ||q_s - q_g|| / tau. Both endpoints
// pass through a shared encoder over random Fourier features; the two
// encodings are combined with elementwise max and min before the generator
// head, which makes tau(q_s, q_g) == tau(q_g, q_s) bit for bit.
//
// Parameters are shared across environments; each registered environment
// contributes only its frozen Fourier frequency matrix.
class FieldNet {
 public:
  FieldNet(int dims, int width, int blocks, int fourier_h);

  int dims() const { return dims_; }
  int width() const { return width_; }
  int blocks() const { return blocks_; }
  int fourier_h() const { return fourier_h_; }

  // He-style random init; the generator output row starts small so that the
  // initial tau field sits near 1 without being exactly constant.
  void init_params(std::uint64_t seed);

  void add_env(const Environment& env);
  bool has_env(int env_id) const;
  bool code_matches(const Environment& env) const;

  ad::ParamStore& params() { return *params_; }
  const ad::ParamStore& params() const { return *params_; }
  const ad::Program& program(int env_id) const;
  ad::Evaluator& evaluator(int env_id);

  double tau(int env_id, const Vec& qs, const Vec& qg);
  ad::DiffBundle tau_grad(int env_id, const Vec& qs, const Vec& qg);
  ad::DiffBundle tau_grad_hess(int env_id, const Vec& qs, const Vec& qg);

  // Same value and gradient as tau_grad, computed as one value pass plus one
  // reverse sweep. Much cheaper for single queries, so the planner uses it on
  // every march step. The value is bit-identical to tau(); the gradient
  // agrees with tau_grad() to roundoff (summation order differs).
  ad::DiffBundle tau_grad_reverse(int env_id, const Vec& qs, const Vec& qg);

  double arrival_time(int env_id, const Vec& qs, const Vec& qg);

  void save(const std::string& path) const;
  static FieldNet load(const std::string& path);

 private:
  void build_program(int env_id, const Mat& code);

  int dims_, width_, blocks_, fourier_h_;
  // Owned behind a pointer so evaluators, which hold references into the
  // store, survive moves of the net itself.
  std::unique_ptr<ad::ParamStore> params_;
  std::vector<int> f_tensors_;  // encoder tensor ids: input affine then block pairs
  std::vector<int> g_tensors_;  // generator tensor ids, output affine last
  std::map<int, Mat> codes_;    // env id -> dims x h frequency matrix
  std::map<int, ad::Program> programs_;
  std::map<int, std::unique_ptr<ad::Evaluator>> evals_;
};

enum class Side { Start, Goal };

// Speed implied by the arrival-time model at one endpoint, read off the tau
// bundle by the chain rule. The `eps` variant adds the scaled Laplacian of
// tau to the denominator, which smooths the field the net has to match;
// eps = 0 is the sharp limit used at plan time (no second derivatives
// needed). The bundle must carry derivatives over the full stacked input
// (block lo=0, len=2*dims).
double speed_direct(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side);
double speed_viscous(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side, double eps);

// Accumulate d(loss)/d(tau bundle) into `seed` given sbar = d(loss)/d(speed).
// Mirrors the corresponding readout exactly, including clamp branches.
void speed_direct_adjoint(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                          double sbar, ad::BundleSeed& seed);
void speed_viscous_adjoint(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                           double eps, double sbar, ad::BundleSeed& seed);

}  // namespace eikfield
