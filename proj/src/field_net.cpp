#include "eikfield/field_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "eikfield/rng.hpp"

namespace eikfield {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
constexpr double kRadicandClamp = 1e-12;
constexpr double kDenomClamp = 1e-8;
}  // namespace

FieldNet::FieldNet(int dims, int width, int blocks, int fourier_h)
    : dims_(dims), width_(width), blocks_(blocks), fourier_h_(fourier_h),
      params_(std::make_unique<ad::ParamStore>()) {
  if (dims < 1) throw std::invalid_argument("field net: dims must be >= 1");
  if (width < 2) throw std::invalid_argument("field net: width must be >= 2");
  if (blocks < 0) throw std::invalid_argument("field net: blocks must be >= 0");
  if (fourier_h < 1) throw std::invalid_argument("field net: fourier_h must be >= 1");

  f_tensors_.push_back(params_->add(width_, 2 * fourier_h_));
  for (int i = 0; i < blocks_; ++i) {
    f_tensors_.push_back(params_->add(width_, width_));
    f_tensors_.push_back(params_->add(width_, width_));
  }
  g_tensors_.push_back(params_->add(width_, 2 * width_));
  for (int i = 0; i < blocks_; ++i) {
    g_tensors_.push_back(params_->add(width_, width_));
    g_tensors_.push_back(params_->add(width_, width_));
  }
  g_tensors_.push_back(params_->add(1, width_));
}

void FieldNet::init_params(std::uint64_t seed) {
  Rng rng(seed);
  // Residual branch outputs start near zero so every block opens as a small
  // perturbation of the identity; without this the stacked blocks inflate
  // the field's curvature by orders of magnitude and the speed readout
  // saturates its clamps before training begins.
  std::vector<double> extra(static_cast<std::size_t>(params_->count()), 1.0);
  for (int i = 0; i < blocks_; ++i) {
    extra[static_cast<std::size_t>(f_tensors_[2 + 2 * i])] = 0.05;
    extra[static_cast<std::size_t>(g_tensors_[2 + 2 * i])] = 0.05;
  }
  const int last = g_tensors_.back();
  for (int id = 0; id < params_->count(); ++id) {
    Mat& w = params_->weight(id);
    double scale = std::sqrt(2.0 / static_cast<double>(w.cols())) * extra[static_cast<std::size_t>(id)];
    if (id == last) scale = 0.1 * std::sqrt(1.0 / static_cast<double>(w.cols()));
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * rng.normal();
    params_->bias(id).setZero();
  }
}

void FieldNet::build_program(int env_id, const Mat& code) {
  ad::Program prog(2 * dims_);
  const int qs = prog.slice(prog.input(), 0, dims_);
  const int qg = prog.slice(prog.input(), dims_, dims_);

  Mat freq = kTwoPi * code.transpose();  // h x dims

  auto encode = [&](int q) {
    int z = prog.affine_const(q, freq);
    int enc = prog.concat(prog.apply(z, ad::Elem::Cos), prog.apply(z, ad::Elem::Sin));
    int y = prog.apply(prog.affine(enc, f_tensors_[0], *params_), ad::Elem::Silu);
    for (int i = 0; i < blocks_; ++i) {
      int t = prog.apply(prog.affine(y, f_tensors_[1 + 2 * i], *params_), ad::Elem::Silu);
      y = prog.vadd(y, prog.affine(t, f_tensors_[2 + 2 * i], *params_));
    }
    return y;
  };

  const int us = encode(qs);
  const int ug = encode(qg);
  const int sym = prog.concat(prog.vmax(us, ug), prog.vmin(us, ug));

  int y = prog.apply(prog.affine(sym, g_tensors_[0], *params_), ad::Elem::Silu);
  for (int i = 0; i < blocks_; ++i) {
    int t = prog.apply(prog.affine(y, g_tensors_[1 + 2 * i], *params_), ad::Elem::Silu);
    y = prog.vadd(y, prog.affine(t, g_tensors_[2 + 2 * i], *params_));
  }
  const int raw = prog.affine(y, g_tensors_.back(), *params_);
  prog.set_output(prog.apply(raw, ad::Elem::SoftplusOne));

  programs_.emplace(env_id, std::move(prog));
}

void FieldNet::add_env(const Environment& env) {
  env.validate();
  if (env.dims != dims_) {
    throw std::invalid_argument("field net: environment dimension does not match network");
  }
  if (env.fourier_h != fourier_h_) {
    throw std::invalid_argument("field net: environment fourier_h does not match network");
  }
  if (codes_.count(env.id)) {
    if (!code_matches(env)) {
      throw std::invalid_argument("field net: environment id already bound with a different code");
    }
    return;
  }
  Mat code = env.fourier_code();
  build_program(env.id, code);
  codes_.emplace(env.id, std::move(code));
}

bool FieldNet::has_env(int env_id) const { return codes_.count(env_id) > 0; }

bool FieldNet::code_matches(const Environment& env) const {
  auto it = codes_.find(env.id);
  if (it == codes_.end()) return false;
  Mat fresh = env.fourier_code();
  if (fresh.rows() != it->second.rows() || fresh.cols() != it->second.cols()) return false;
  return std::memcmp(fresh.data(), it->second.data(),
                     sizeof(double) * static_cast<std::size_t>(fresh.size())) == 0;
}

const ad::Program& FieldNet::program(int env_id) const {
  auto it = programs_.find(env_id);
  if (it == programs_.end()) {
    throw std::invalid_argument("field net: unknown environment id " + std::to_string(env_id));
  }
  return it->second;
}

ad::Evaluator& FieldNet::evaluator(int env_id) {
  auto it = evals_.find(env_id);
  if (it == evals_.end()) {
    it = evals_.emplace(env_id, std::make_unique<ad::Evaluator>(program(env_id), *params_)).first;
  }
  return *it->second;
}

namespace {
Vec stack(const Vec& qs, const Vec& qg) {
  Vec x(qs.size() + qg.size());
  x << qs, qg;
  return x;
}
}  // namespace

double FieldNet::tau(int env_id, const Vec& qs, const Vec& qg) {
  ad::Evaluator& ev = evaluator(env_id);
  ev.forward(stack(qs, qg), ad::Block{0, 0}, ad::DiffMode::Value);
  return ev.value(0);
}

ad::DiffBundle FieldNet::tau_grad(int env_id, const Vec& qs, const Vec& qg) {
  ad::Evaluator& ev = evaluator(env_id);
  ev.forward(stack(qs, qg), ad::Block{0, 2 * dims_}, ad::DiffMode::Grad);
  return ev.bundle(0);
}

ad::DiffBundle FieldNet::tau_grad_reverse(int env_id, const Vec& qs, const Vec& qg) {
  ad::Evaluator& ev = evaluator(env_id);
  ev.forward(stack(qs, qg), ad::Block{0, 0}, ad::DiffMode::Value);
  ad::DiffBundle b;
  b.value = ev.value(0);
  b.grad = ev.value_input_gradients().col(0);
  return b;
}

ad::DiffBundle FieldNet::tau_grad_hess(int env_id, const Vec& qs, const Vec& qg) {
  ad::Evaluator& ev = evaluator(env_id);
  ev.forward(stack(qs, qg), ad::Block{0, 2 * dims_}, ad::DiffMode::GradHess);
  return ev.bundle(0);
}

double FieldNet::arrival_time(int env_id, const Vec& qs, const Vec& qg) {
  double dist = (qs - qg).norm();
  if (dist == 0.0) {
    throw std::domain_error("arrival_time: start and goal coincide");
  }
  return dist / tau(env_id, qs, qg);
}

// ---------------------------------------------------------------------------
// Speed readouts.
//
// With T = ||q_s - q_g|| / tau, the squared gradient norm at one endpoint is
//   |grad T|^2 = (tau^2 - 2 tau (rr . G) + |rr|^2 |G|^2) / tau^4
// where rr points from the other endpoint to this one and G is the tau
// gradient at this endpoint. The direct readout inverts that norm; the
// viscous readout adds eps * (laplacian of tau) to the inverse speed before
// inverting, which regularizes the field near obstacles.

namespace {

struct SideView {
  Vec rr;       // this endpoint minus the other one
  double r2;    // |rr|^2
  Vec g;        // tau gradient at this endpoint
  double lap;   // tau laplacian at this endpoint (0 when absent)
  int lo;       // offset of this endpoint inside the full derivative block
  int d;
};

SideView side_view(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                   bool need_hess) {
  const int d = static_cast<int>(qs.size());
  if (b.grad.size() != 2 * d) {
    throw std::invalid_argument("speed readout: bundle gradient must cover both endpoints");
  }
  if (need_hess && b.hess.size() != 2 * d) {
    throw std::invalid_argument("speed readout: bundle is missing second derivatives");
  }
  SideView v;
  v.d = d;
  v.lo = side == Side::Start ? 0 : d;
  v.rr = side == Side::Start ? Vec(qs - qg) : Vec(qg - qs);
  v.r2 = v.rr.squaredNorm();
  v.g = b.grad.segment(v.lo, d);
  v.lap = need_hess ? b.hess.segment(v.lo, d).sum() : 0.0;
  return v;
}

struct Radicand {
  double num = 0.0;    // clamped
  bool live = false;   // clamp inactive
  double u = 0.0;      // rr . g
};

Radicand radicand(const SideView& v, double tau) {
  Radicand r;
  r.u = v.rr.dot(v.g);
  double num = tau * tau - 2.0 * tau * r.u + v.r2 * v.g.squaredNorm();
  r.live = num > kRadicandClamp;
  r.num = std::max(num, kRadicandClamp);
  return r;
}

}  // namespace

double speed_direct(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side) {
  SideView v = side_view(b, qs, qg, side, false);
  Radicand r = radicand(v, b.value);
  return b.value * b.value / std::sqrt(r.num);
}

double speed_viscous(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                     double eps) {
  SideView v = side_view(b, qs, qg, side, true);
  const double tau = b.value;
  Radicand r = radicand(v, tau);
  double sq = std::sqrt(r.num / (tau * tau * tau * tau));
  double den = eps * v.lap + sq;
  return 1.0 / std::max(den, kDenomClamp);
}

void speed_direct_adjoint(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                          double sbar, ad::BundleSeed& seed) {
  SideView v = side_view(b, qs, qg, side, false);
  const double tau = b.value;
  Radicand r = radicand(v, tau);
  const double sq = std::sqrt(r.num);

  double tau_bar = 2.0 * tau * sbar / sq;
  double sq_bar = -tau * tau * sbar / (sq * sq);
  double num_bar = r.live ? sq_bar / (2.0 * sq) : 0.0;
  tau_bar += num_bar * (2.0 * tau - 2.0 * r.u);
  Vec g_bar = num_bar * (-2.0 * tau * v.rr + 2.0 * v.r2 * v.g);

  seed.value_bar += tau_bar;
  if (seed.grad_bar.size() == 0) seed.grad_bar = Vec::Zero(2 * v.d);
  seed.grad_bar.segment(v.lo, v.d) += g_bar;
}

void speed_viscous_adjoint(const ad::DiffBundle& b, const Vec& qs, const Vec& qg, Side side,
                           double eps, double sbar, ad::BundleSeed& seed) {
  SideView v = side_view(b, qs, qg, side, true);
  const double tau = b.value;
  Radicand r = radicand(v, tau);
  const double tau4 = tau * tau * tau * tau;
  const double rad = r.num / tau4;
  const double sq = std::sqrt(rad);
  const double den = eps * v.lap + sq;
  const bool den_live = den > kDenomClamp;
  const double den_c = std::max(den, kDenomClamp);

  double den_bar = den_live ? -sbar / (den_c * den_c) : 0.0;
  double lap_bar = eps * den_bar;
  double rad_bar = den_bar / (2.0 * sq);
  double num_bar = r.live ? rad_bar / tau4 : 0.0;
  double tau_bar = rad_bar * (-4.0 * r.num / (tau4 * tau)) + num_bar * (2.0 * tau - 2.0 * r.u);
  Vec g_bar = num_bar * (-2.0 * tau * v.rr + 2.0 * v.r2 * v.g);

  seed.value_bar += tau_bar;
  if (seed.grad_bar.size() == 0) seed.grad_bar = Vec::Zero(2 * v.d);
  seed.grad_bar.segment(v.lo, v.d) += g_bar;
  if (seed.hess_bar.size() == 0) seed.hess_bar = Vec::Zero(2 * v.d);
  seed.hess_bar.segment(v.lo, v.d).array() += lap_bar;
}

// ---------------------------------------------------------------------------
// Checkpoint round-trip.

namespace {
constexpr char kNetMagic[4] = {'E', 'P', 'N', 'N'};
constexpr std::uint32_t kNetVersion = 1;

void w32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void wi32(std::ostream& o, std::int32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void wmat(std::ostream& o, const Mat& m) {
  o.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
}
std::uint32_t r32(std::istream& i) {
  std::uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::int32_t ri32(std::istream& i) {
  std::int32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
void rmat(std::istream& i, Mat& m) {
  i.read(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size());
}
}  // namespace

void FieldNet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint file: " + path);
  out.write(kNetMagic, 4);
  w32(out, kNetVersion);
  w32(out, static_cast<std::uint32_t>(dims_));
  w32(out, static_cast<std::uint32_t>(width_));
  w32(out, static_cast<std::uint32_t>(blocks_));
  w32(out, static_cast<std::uint32_t>(fourier_h_));
  w32(out, static_cast<std::uint32_t>(params_->count()));
  for (int id = 0; id < params_->count(); ++id) {
    const Mat& w = params_->weight(id);
    w32(out, static_cast<std::uint32_t>(w.rows()));
    w32(out, static_cast<std::uint32_t>(w.cols()));
    wmat(out, w);
    out.write(reinterpret_cast<const char*>(params_->bias(id).data()),
              sizeof(double) * params_->bias(id).size());
  }
  w32(out, static_cast<std::uint32_t>(codes_.size()));
  for (const auto& [env_id, code] : codes_) {
    wi32(out, env_id);
    wmat(out, code);
  }
  if (!out) throw std::runtime_error("failed while writing checkpoint file: " + path);
}

FieldNet FieldNet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kNetMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  if (r32(in) != kNetVersion) throw std::runtime_error("unsupported checkpoint version in " + path);
  const int dims = static_cast<int>(r32(in));
  const int width = static_cast<int>(r32(in));
  const int blocks = static_cast<int>(r32(in));
  const int fourier_h = static_cast<int>(r32(in));
  if (dims < 1 || dims > 64 || width < 2 || width > 65536 || blocks < 0 || blocks > 1024 ||
      fourier_h < 1 || fourier_h > 65536) {
    throw std::runtime_error("checkpoint header out of range in " + path);
  }
  FieldNet net(dims, width, blocks, fourier_h);
  const std::uint32_t n_tensors = r32(in);
  if (n_tensors != static_cast<std::uint32_t>(net.params_->count())) {
    throw std::runtime_error("checkpoint tensor count does not match architecture in " + path);
  }
  for (int id = 0; id < net.params_->count(); ++id) {
    Mat& w = net.params_->weight(id);
    const auto rows = r32(in), cols = r32(in);
    if (rows != static_cast<std::uint32_t>(w.rows()) ||
        cols != static_cast<std::uint32_t>(w.cols())) {
      throw std::runtime_error("checkpoint tensor shape mismatch in " + path);
    }
    rmat(in, w);
    in.read(reinterpret_cast<char*>(net.params_->bias(id).data()),
            sizeof(double) * net.params_->bias(id).size());
  }
  const std::uint32_t n_envs = r32(in);
  for (std::uint32_t k = 0; k < n_envs; ++k) {
    const int env_id = static_cast<int>(ri32(in));
    Mat code(dims, fourier_h);
    rmat(in, code);
    net.build_program(env_id, code);
    net.codes_.emplace(env_id, std::move(code));
  }
  if (!in) throw std::runtime_error("checkpoint file truncated: " + path);
  return net;
}

}  // namespace eikfield
