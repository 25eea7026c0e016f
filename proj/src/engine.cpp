#include "eikfield/engine.hpp"

#include <cmath>
#include <stdexcept>

namespace eikfield::ad {

namespace {

using Arr = Eigen::ArrayXXd;

constexpr double kSqrtClamp = 1e-12;
constexpr double kSoftplusShift = 0.54132485461292319;  // log(e - 1), makes f(0) == 1
constexpr double kPositivityFloor = 1e-30;

// Numerically stable logistic; tanh saturates cleanly in both tails.
template <class E>
auto logistic(const E& z) {
  return 0.5 * (1.0 + (0.5 * z).tanh());
}

// Evaluates an elementwise primitive and its derivatives up to `order` on a
// whole slot matrix. Higher-order outputs are only touched when requested.
void elem_eval(Elem fn, const Mat& x, int order, Arr& f0, Arr& f1, Arr& f2, Arr& f3) {
  const auto a = x.array();
  switch (fn) {
    case Elem::Sin:
      f0 = a.sin();
      if (order >= 1) f1 = a.cos();
      if (order >= 2) f2 = -f0;
      if (order >= 3) f3 = -f1;
      break;
    case Elem::Cos:
      f0 = a.cos();
      if (order >= 1) f1 = -a.sin();
      if (order >= 2) f2 = -f0;
      if (order >= 3) f3 = -f1;
      break;
    case Elem::Silu: {
      Arr s = logistic(a);
      f0 = a * s;
      if (order >= 1) {
        Arr sp = s * (1.0 - s);
        f1 = s + a * sp;
        if (order >= 2) {
          Arr spp = sp * (1.0 - 2.0 * s);
          f2 = 2.0 * sp + a * spp;
          if (order >= 3) {
            Arr sppp = spp * (1.0 - 2.0 * s) - 2.0 * sp.square();
            f3 = 3.0 * spp + a * sppp;
          }
        }
      }
      break;
    }
    case Elem::SoftplusOne: {
      Arr z = a + kSoftplusShift;
      f0 = z.max(0.0) + (-z.abs()).exp().log1p() + kPositivityFloor;
      if (order >= 1) {
        Arr s = logistic(z);
        f1 = s;
        if (order >= 2) {
          f2 = s * (1.0 - s);
          if (order >= 3) f3 = f2 * (1.0 - 2.0 * s);
        }
      }
      break;
    }
    case Elem::Square:
      f0 = a.square();
      if (order >= 1) f1 = 2.0 * a;
      if (order >= 2) f2 = Arr::Constant(x.rows(), x.cols(), 2.0);
      if (order >= 3) f3 = Arr::Zero(x.rows(), x.cols());
      break;
    case Elem::Cube:
      f0 = a.cube();
      if (order >= 1) f1 = 3.0 * a.square();
      if (order >= 2) f2 = 6.0 * a;
      if (order >= 3) f3 = Arr::Constant(x.rows(), x.cols(), 6.0);
      break;
    case Elem::Sqrt: {
      // Below the clamp the output is constant, so derivatives vanish there;
      // the clamp itself never differentiates.
      Arr xc = a.max(kSqrtClamp);
      Arr live = (a > kSqrtClamp).cast<double>();
      Arr r = xc.sqrt();
      f0 = r;
      if (order >= 1) f1 = live * 0.5 / r;
      if (order >= 2) f2 = live * -0.25 / (xc * r);
      if (order >= 3) f3 = live * 0.375 / (xc * xc * r);
      break;
    }
    case Elem::Recip: {
      Arr inv = a.inverse();
      f0 = inv;
      if (order >= 1) f1 = -inv.square();
      if (order >= 2) f2 = 2.0 * inv.cube();
      if (order >= 3) f3 = -6.0 * inv.square().square();
      break;
    }
    default:
      throw std::logic_error("elem_eval: unsupported primitive");
  }
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Slice: return "slice";
    case OpKind::AffineParam: return "affine";
    case OpKind::AffineConst: return "affine_const";
    case OpKind::Apply: return "apply";
    case OpKind::Max: return "max";
    case OpKind::Min: return "min";
    case OpKind::Mul: return "mul";
    case OpKind::Add: return "add";
    case OpKind::Concat: return "concat";
  }
  return "?";
}

}  // namespace

ParamTape::ParamTape(const ParamStore& store) {
  weights_.reserve(store.count());
  biases_.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    weights_.push_back(Mat::Zero(store.weight(i).rows(), store.weight(i).cols()));
    biases_.push_back(Vec::Zero(store.bias(i).size()));
  }
}

void ParamTape::reset() {
  for (auto& w : weights_) w.setZero();
  for (auto& b : biases_) b.setZero();
}

bool ParamTape::all_finite() const {
  for (const auto& w : weights_) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases_) {
    if (!b.allFinite()) return false;
  }
  return true;
}

double ParamTape::squared_norm() const {
  double n = 0.0;
  for (const auto& w : weights_) n += w.squaredNorm();
  for (const auto& b : biases_) n += b.squaredNorm();
  return n;
}

Evaluator::Evaluator(const Program& prog, const ParamStore& params)
    : prog_(prog), params_(params) {
  const int n = static_cast<int>(prog_.ops().size());
  v_.resize(n);
  d_.resize(n);
  h_.resize(n);
  va_.resize(n);
  da_.resize(n);
  ha_.resize(n);
  mask_.resize(n);
  prog_.output();  // throws if the program was never finalized
}

void Evaluator::check_finite(int op_index) const {
  bool ok = v_[op_index].allFinite();
  if (ok && mode_ != DiffMode::Value) ok = d_[op_index].allFinite();
  if (ok && mode_ == DiffMode::GradHess) ok = h_[op_index].allFinite();
  if (!ok) {
    throw NonFiniteError(op_index, std::string("non-finite value produced by op ") +
                                       std::to_string(op_index) + " (" +
                                       op_name(prog_.ops()[op_index].kind) + ")");
  }
}

void Evaluator::forward(const Eigen::Ref<const Mat>& X, Block block, DiffMode mode) {
  const auto& ops = prog_.ops();
  if (X.rows() != prog_.input_width()) {
    throw std::invalid_argument("evaluator: input rows do not match program width");
  }
  if (mode != DiffMode::Value) {
    if (block.len < 1 || block.lo < 0 || block.lo + block.len > prog_.input_width()) {
      throw std::invalid_argument("evaluator: derivative block out of range");
    }
  }
  mode_ = mode;
  block_ = block;
  nsamp_ = static_cast<int>(X.cols());
  ndir_ = mode == DiffMode::Value ? 0 : block.len;
  const int S = nsamp_;
  const Eigen::Index K = ndir_;
  const bool want_d = mode != DiffMode::Value;
  const bool want_h = mode == DiffMode::GradHess;

  Arr f0, f1, f2, f3;

  for (int i = 0; i < static_cast<int>(ops.size()); ++i) {
    const Op& op = ops[i];
    const int w = op.width;
    v_[i].resize(w, S);
    if (want_d) d_[i].resize(w, S * K);
    if (want_h) h_[i].resize(w, S * K);

    switch (op.kind) {
      case OpKind::Input: {
        v_[i] = X;
        if (want_d) {
          d_[i].setZero();
          for (Eigen::Index s = 0; s < S; ++s) {
            for (Eigen::Index k = 0; k < K; ++k) d_[i](block.lo + k, s * K + k) = 1.0;
          }
        }
        if (want_h) h_[i].setZero();
        break;
      }
      case OpKind::Slice: {
        v_[i] = v_[op.a].middleRows(op.offset, w);
        if (want_d) d_[i] = d_[op.a].middleRows(op.offset, w);
        if (want_h) h_[i] = h_[op.a].middleRows(op.offset, w);
        break;
      }
      case OpKind::AffineParam: {
        const Mat& W = params_.weight(op.param);
        v_[i].noalias() = W * v_[op.a];
        v_[i].colwise() += params_.bias(op.param);
        if (want_d) d_[i].noalias() = W * d_[op.a];
        if (want_h) h_[i].noalias() = W * h_[op.a];
        break;
      }
      case OpKind::AffineConst: {
        v_[i].noalias() = op.cw * v_[op.a];
        if (want_d) d_[i].noalias() = op.cw * d_[op.a];
        if (want_h) h_[i].noalias() = op.cw * h_[op.a];
        break;
      }
      case OpKind::Apply: {
        const int order = want_h ? 2 : (want_d ? 1 : 0);
        elem_eval(op.fn, v_[op.a], order, f0, f1, f2, f3);
        v_[i] = f0.matrix();
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto dx = d_[op.a].middleCols(s * K, K).array();
            d_[i].middleCols(s * K, K).array() = dx.colwise() * f1.col(s);
            if (want_h) {
              auto hx = h_[op.a].middleCols(s * K, K).array();
              h_[i].middleCols(s * K, K).array() =
                  dx.square().colwise() * f2.col(s) + hx.colwise() * f1.col(s);
            }
          }
        }
        break;
      }
      case OpKind::Max:
      case OpKind::Min: {
        const Mat& va = v_[op.a];
        const Mat& vb = v_[op.b];
        Eigen::ArrayXXd& m = mask_[i];
        if (op.kind == OpKind::Max) {
          m = (va.array() >= vb.array()).cast<double>();
        } else {
          m = (va.array() <= vb.array()).cast<double>();
        }
        v_[i].array() = m * va.array() + (1.0 - m) * vb.array();
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto da = d_[op.a].middleCols(s * K, K).array();
            auto db = d_[op.b].middleCols(s * K, K).array();
            d_[i].middleCols(s * K, K).array() =
                da.colwise() * m.col(s) + db.colwise() * (1.0 - m.col(s));
            if (want_h) {
              auto haa = h_[op.a].middleCols(s * K, K).array();
              auto hbb = h_[op.b].middleCols(s * K, K).array();
              h_[i].middleCols(s * K, K).array() =
                  haa.colwise() * m.col(s) + hbb.colwise() * (1.0 - m.col(s));
            }
          }
        }
        break;
      }
      case OpKind::Mul: {
        const Mat& va = v_[op.a];
        const Mat& vb = v_[op.b];
        v_[i] = va.cwiseProduct(vb);
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto da = d_[op.a].middleCols(s * K, K).array();
            auto db = d_[op.b].middleCols(s * K, K).array();
            d_[i].middleCols(s * K, K).array() =
                da.colwise() * vb.col(s).array() + db.colwise() * va.col(s).array();
            if (want_h) {
              auto haa = h_[op.a].middleCols(s * K, K).array();
              auto hbb = h_[op.b].middleCols(s * K, K).array();
              h_[i].middleCols(s * K, K).array() = haa.colwise() * vb.col(s).array() +
                                                   hbb.colwise() * va.col(s).array() +
                                                   2.0 * (da * db);
            }
          }
        }
        break;
      }
      case OpKind::Add: {
        v_[i] = v_[op.a] + v_[op.b];
        if (want_d) d_[i] = d_[op.a] + d_[op.b];
        if (want_h) h_[i] = h_[op.a] + h_[op.b];
        break;
      }
      case OpKind::Concat: {
        const int wa = prog_.width_of(op.a);
        const int wb = prog_.width_of(op.b);
        v_[i].topRows(wa) = v_[op.a];
        v_[i].bottomRows(wb) = v_[op.b];
        if (want_d) {
          d_[i].topRows(wa) = d_[op.a];
          d_[i].bottomRows(wb) = d_[op.b];
        }
        if (want_h) {
          h_[i].topRows(wa) = h_[op.a];
          h_[i].bottomRows(wb) = h_[op.b];
        }
        break;
      }
      default:
        throw std::logic_error("evaluator: unsupported op kind");
    }
    check_finite(i);
  }
}

double Evaluator::value(int s) const {
  return v_[prog_.output()](0, s);
}

Vec Evaluator::grad(int s) const {
  if (mode_ == DiffMode::Value) throw std::logic_error("evaluator: no gradient in Value mode");
  Vec g(ndir_);
  const Mat& dm = d_[prog_.output()];
  for (int k = 0; k < ndir_; ++k) g[k] = dm(0, static_cast<Eigen::Index>(s) * ndir_ + k);
  return g;
}

Vec Evaluator::hess(int s) const {
  if (mode_ != DiffMode::GradHess) throw std::logic_error("evaluator: no hessian in this mode");
  Vec hv(ndir_);
  const Mat& hm = h_[prog_.output()];
  for (int k = 0; k < ndir_; ++k) hv[k] = hm(0, static_cast<Eigen::Index>(s) * ndir_ + k);
  return hv;
}

DiffBundle Evaluator::bundle(int s) const {
  DiffBundle b;
  b.value = value(s);
  if (mode_ != DiffMode::Value) b.grad = grad(s);
  if (mode_ == DiffMode::GradHess) b.hess = hess(s);
  return b;
}

void Evaluator::backward(const std::vector<BundleSeed>& seeds, ParamTape& tape) {
  const auto& ops = prog_.ops();
  if (nsamp_ == 0) throw std::logic_error("evaluator: backward before forward");
  if (static_cast<int>(seeds.size()) != nsamp_) {
    throw std::invalid_argument("evaluator: one seed per sample required");
  }
  const int S = nsamp_;
  const Eigen::Index K = ndir_;
  const bool want_d = mode_ != DiffMode::Value;
  const bool want_h = mode_ == DiffMode::GradHess;

  for (int i = 0; i < static_cast<int>(ops.size()); ++i) {
    va_[i].resize(v_[i].rows(), v_[i].cols());
    va_[i].setZero();
    if (want_d) {
      da_[i].resize(d_[i].rows(), d_[i].cols());
      da_[i].setZero();
    }
    if (want_h) {
      ha_[i].resize(h_[i].rows(), h_[i].cols());
      ha_[i].setZero();
    }
  }

  const int out = prog_.output();
  for (Eigen::Index s = 0; s < S; ++s) {
    const BundleSeed& seed = seeds[s];
    va_[out](0, s) = seed.value_bar;
    if (want_d && seed.grad_bar.size() > 0) {
      if (seed.grad_bar.size() != K) {
        throw std::invalid_argument("evaluator: gradient seed length mismatch");
      }
      for (Eigen::Index k = 0; k < K; ++k) da_[out](0, s * K + k) = seed.grad_bar[k];
    }
    if (want_h && seed.hess_bar.size() > 0) {
      if (seed.hess_bar.size() != K) {
        throw std::invalid_argument("evaluator: hessian seed length mismatch");
      }
      for (Eigen::Index k = 0; k < K; ++k) ha_[out](0, s * K + k) = seed.hess_bar[k];
    }
  }

  Arr f0, f1, f2, f3;

  for (int i = static_cast<int>(ops.size()) - 1; i >= 1; --i) {
    const Op& op = ops[i];
    switch (op.kind) {
      case OpKind::Slice: {
        va_[op.a].middleRows(op.offset, op.width) += va_[i];
        if (want_d) da_[op.a].middleRows(op.offset, op.width) += da_[i];
        if (want_h) ha_[op.a].middleRows(op.offset, op.width) += ha_[i];
        break;
      }
      case OpKind::AffineParam: {
        const Mat& W = params_.weight(op.param);
        Mat& gw = tape.weight(op.param);
        gw.noalias() += va_[i] * v_[op.a].transpose();
        if (want_d) gw.noalias() += da_[i] * d_[op.a].transpose();
        if (want_h) gw.noalias() += ha_[i] * h_[op.a].transpose();
        tape.bias(op.param) += va_[i].rowwise().sum();
        va_[op.a].noalias() += W.transpose() * va_[i];
        if (want_d) da_[op.a].noalias() += W.transpose() * da_[i];
        if (want_h) ha_[op.a].noalias() += W.transpose() * ha_[i];
        break;
      }
      case OpKind::AffineConst: {
        va_[op.a].noalias() += op.cw.transpose() * va_[i];
        if (want_d) da_[op.a].noalias() += op.cw.transpose() * da_[i];
        if (want_h) ha_[op.a].noalias() += op.cw.transpose() * ha_[i];
        break;
      }
      case OpKind::Apply: {
        const int order = want_h ? 3 : (want_d ? 2 : 1);
        elem_eval(op.fn, v_[op.a], order, f0, f1, f2, f3);
        va_[op.a].array() += va_[i].array() * f1;
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto dx = d_[op.a].middleCols(s * K, K).array();
            auto dyb = da_[i].middleCols(s * K, K).array();
            va_[op.a].col(s).array() += (dyb * dx).rowwise().sum() * f2.col(s);
            da_[op.a].middleCols(s * K, K).array() += dyb.colwise() * f1.col(s);
            if (want_h) {
              auto hx = h_[op.a].middleCols(s * K, K).array();
              auto hyb = ha_[i].middleCols(s * K, K).array();
              va_[op.a].col(s).array() += (hyb * dx.square()).rowwise().sum() * f3.col(s) +
                                          (hyb * hx).rowwise().sum() * f2.col(s);
              da_[op.a].middleCols(s * K, K).array() +=
                  (2.0 * (hyb * dx)).colwise() * f2.col(s);
              ha_[op.a].middleCols(s * K, K).array() += hyb.colwise() * f1.col(s);
            }
          }
        }
        break;
      }
      case OpKind::Max:
      case OpKind::Min: {
        const Eigen::ArrayXXd& m = mask_[i];
        va_[op.a].array() += va_[i].array() * m;
        va_[op.b].array() += va_[i].array() * (1.0 - m);
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto dyb = da_[i].middleCols(s * K, K).array();
            da_[op.a].middleCols(s * K, K).array() += dyb.colwise() * m.col(s);
            da_[op.b].middleCols(s * K, K).array() += dyb.colwise() * (1.0 - m.col(s));
            if (want_h) {
              auto hyb = ha_[i].middleCols(s * K, K).array();
              ha_[op.a].middleCols(s * K, K).array() += hyb.colwise() * m.col(s);
              ha_[op.b].middleCols(s * K, K).array() += hyb.colwise() * (1.0 - m.col(s));
            }
          }
        }
        break;
      }
      case OpKind::Mul: {
        const Mat& va = v_[op.a];
        const Mat& vb = v_[op.b];
        va_[op.a].array() += va_[i].array() * vb.array();
        va_[op.b].array() += va_[i].array() * va.array();
        if (want_d) {
          for (Eigen::Index s = 0; s < S; ++s) {
            auto da = d_[op.a].middleCols(s * K, K).array();
            auto db = d_[op.b].middleCols(s * K, K).array();
            auto dyb = da_[i].middleCols(s * K, K).array();
            va_[op.a].col(s).array() += (dyb * db).rowwise().sum();
            va_[op.b].col(s).array() += (dyb * da).rowwise().sum();
            da_[op.a].middleCols(s * K, K).array() += dyb.colwise() * vb.col(s).array();
            da_[op.b].middleCols(s * K, K).array() += dyb.colwise() * va.col(s).array();
            if (want_h) {
              auto haa = h_[op.a].middleCols(s * K, K).array();
              auto hbb = h_[op.b].middleCols(s * K, K).array();
              auto hyb = ha_[i].middleCols(s * K, K).array();
              va_[op.a].col(s).array() += (hyb * hbb).rowwise().sum();
              va_[op.b].col(s).array() += (hyb * haa).rowwise().sum();
              da_[op.a].middleCols(s * K, K).array() += 2.0 * (hyb * db);
              da_[op.b].middleCols(s * K, K).array() += 2.0 * (hyb * da);
              ha_[op.a].middleCols(s * K, K).array() += hyb.colwise() * vb.col(s).array();
              ha_[op.b].middleCols(s * K, K).array() += hyb.colwise() * va.col(s).array();
            }
          }
        }
        break;
      }
      case OpKind::Add: {
        va_[op.a] += va_[i];
        va_[op.b] += va_[i];
        if (want_d) {
          da_[op.a] += da_[i];
          da_[op.b] += da_[i];
        }
        if (want_h) {
          ha_[op.a] += ha_[i];
          ha_[op.b] += ha_[i];
        }
        break;
      }
      case OpKind::Concat: {
        const int wa = prog_.width_of(op.a);
        const int wb = prog_.width_of(op.b);
        va_[op.a] += va_[i].topRows(wa);
        va_[op.b] += va_[i].bottomRows(wb);
        if (want_d) {
          da_[op.a] += da_[i].topRows(wa);
          da_[op.b] += da_[i].bottomRows(wb);
        }
        if (want_h) {
          ha_[op.a] += ha_[i].topRows(wa);
          ha_[op.b] += ha_[i].bottomRows(wb);
        }
        break;
      }
      default:
        throw std::logic_error("evaluator: unsupported op kind in backward");
    }
  }
}

Mat Evaluator::value_input_gradients() {
  const auto& ops = prog_.ops();
  if (nsamp_ == 0) throw std::logic_error("evaluator: gradients requested before forward");
  const int S = nsamp_;

  for (int i = 0; i < static_cast<int>(ops.size()); ++i) {
    va_[i].resize(v_[i].rows(), S);
    va_[i].setZero();
  }
  va_[prog_.output()].row(0).setOnes();

  Arr f0, f1, f2, f3;
  for (int i = static_cast<int>(ops.size()) - 1; i >= 1; --i) {
    const Op& op = ops[i];
    switch (op.kind) {
      case OpKind::Slice:
        va_[op.a].middleRows(op.offset, op.width) += va_[i];
        break;
      case OpKind::AffineParam:
        va_[op.a].noalias() += params_.weight(op.param).transpose() * va_[i];
        break;
      case OpKind::AffineConst:
        va_[op.a].noalias() += op.cw.transpose() * va_[i];
        break;
      case OpKind::Apply:
        elem_eval(op.fn, v_[op.a], 1, f0, f1, f2, f3);
        va_[op.a].array() += va_[i].array() * f1;
        break;
      case OpKind::Max:
      case OpKind::Min:
        va_[op.a].array() += va_[i].array() * mask_[i];
        va_[op.b].array() += va_[i].array() * (1.0 - mask_[i]);
        break;
      case OpKind::Mul:
        va_[op.a].array() += va_[i].array() * v_[op.b].array();
        va_[op.b].array() += va_[i].array() * v_[op.a].array();
        break;
      case OpKind::Add:
        va_[op.a] += va_[i];
        va_[op.b] += va_[i];
        break;
      case OpKind::Concat:
        va_[op.a] += va_[i].topRows(prog_.width_of(op.a));
        va_[op.b] += va_[i].bottomRows(prog_.width_of(op.b));
        break;
      default:
        throw std::logic_error("evaluator: unsupported op kind in value gradient sweep");
    }
  }
  return va_[0];
}

DiffBundle value_grad(const Program& prog, const ParamStore& params, const Vec& x, Block block) {
  Evaluator ev(prog, params);
  ev.forward(x, block, DiffMode::Grad);
  return ev.bundle(0);
}

DiffBundle value_grad_laplacian(const Program& prog, const ParamStore& params, const Vec& x,
                                Block block) {
  Evaluator ev(prog, params);
  ev.forward(x, block, DiffMode::GradHess);
  return ev.bundle(0);
}

double param_grad(const Program& prog, const ParamStore& params, const Eigen::Ref<const Mat>& X,
                  Block block, DiffMode mode,
                  const std::function<LossSeeds(const Evaluator&)>& loss, ParamTape& tape) {
  Evaluator ev(prog, params);
  ev.forward(X, block, mode);
  LossSeeds ls = loss(ev);
  ev.backward(ls.seeds, tape);
  return ls.loss;
}

}  // namespace eikfield::ad
