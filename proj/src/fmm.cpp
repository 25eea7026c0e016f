#include "eikfield/fmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <stdexcept>

namespace eikfield {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Eigen::Index Grid::size() const {
  Eigen::Index n = 1;
  for (int i = 0; i < dims; ++i) n *= res;
  return n;
}

double Grid::spacing(int axis) const {
  return (bounds(axis, 1) - bounds(axis, 0)) / (res - 1);
}

Vec Grid::node_pos(const std::vector<int>& idx) const {
  Vec q(dims);
  for (int i = 0; i < dims; ++i) q[i] = bounds(i, 0) + idx[i] * spacing(i);
  return q;
}

Eigen::Index Grid::flat(const std::vector<int>& idx) const {
  Eigen::Index f = 0;
  for (int i = 0; i < dims; ++i) f = f * res + idx[i];
  return f;
}

std::vector<int> Grid::unflat(Eigen::Index f) const {
  std::vector<int> idx(dims);
  for (int i = dims - 1; i >= 0; --i) {
    idx[i] = static_cast<int>(f % res);
    f /= res;
  }
  return idx;
}

std::vector<int> Grid::nearest_node(const Vec& q) const {
  std::vector<int> idx(dims);
  for (int i = 0; i < dims; ++i) {
    int k = static_cast<int>(std::lround((q[i] - bounds(i, 0)) / spacing(i)));
    idx[i] = std::clamp(k, 0, res - 1);
  }
  return idx;
}

double& Grid::at(const std::vector<int>& idx) { return values[flat(idx)]; }
double Grid::at(const std::vector<int>& idx) const { return values[flat(idx)]; }

Grid make_grid(const Environment& env, int res) {
  if (res < 3) throw std::invalid_argument("grid resolution must be >= 3");
  Grid g;
  g.dims = env.dims;
  g.res = res;
  g.bounds = env.bounds;
  g.values.assign(static_cast<std::size_t>(g.size()), 0.0);
  return g;
}

Grid rasterize_speed(const Environment& env, int res, double alpha) {
  Grid g = make_grid(env, res);
  std::vector<int> idx(g.dims, 0);
  Vec q(g.dims);
  for (Eigen::Index f = 0; f < g.size(); ++f) {
    for (int i = 0; i < g.dims; ++i) q[i] = g.bounds(i, 0) + idx[i] * g.spacing(i);
    g.values[f] = env.speed_alpha(q, alpha);
    for (int i = g.dims - 1; i >= 0; --i) {
      if (++idx[i] < res) break;
      idx[i] = 0;
    }
  }
  return g;
}

Grid fmm_solve(const Grid& speed, const Vec& source) {
  const int d = speed.dims;
  const int res = speed.res;
  if (source.size() != d) throw std::invalid_argument("fmm_solve: source dimension mismatch");
  for (int i = 0; i < d; ++i) {
    if (source[i] < speed.bounds(i, 0) || source[i] > speed.bounds(i, 1)) {
      throw std::domain_error("fmm_solve: source lies outside the grid");
    }
  }
  const Eigen::Index n = speed.size();

  Grid times = speed;
  std::fill(times.values.begin(), times.values.end(), kInf);

  std::vector<Eigen::Index> stride(d);
  {
    Eigen::Index s = 1;
    for (int i = d - 1; i >= 0; --i) {
      stride[i] = s;
      s *= res;
    }
  }

  enum : std::uint8_t { kFar = 0, kTrial = 1, kFrozen = 2 };
  std::vector<std::uint8_t> state(n, kFar);

  std::vector<int> src_idx = times.nearest_node(source);
  Eigen::Index src = times.flat(src_idx);
  if (!(speed.values[src] > 0.0)) {
    throw std::invalid_argument("fmm_solve: source lies on a non-positive speed cell");
  }

  // Min-heap over (time, flat index); the index breaks ties deterministically.
  using Entry = std::pair<double, Eigen::Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap;

  times.values[src] = 0.0;
  heap.emplace(0.0, src);

  std::vector<int> idx(d);
  std::vector<double> upa(d), uph(d);
  double last_accepted = 0.0;

  auto solve_update = [&](Eigen::Index f, const std::vector<int>& node) -> double {
    double s = speed.values[f];
    if (!(s > 0.0)) return kInf;
    // One upwind value per axis: the smaller frozen neighbor, if any.
    int k = 0;
    for (int ax = 0; ax < d; ++ax) {
      double best = kInf;
      if (node[ax] > 0) {
        Eigen::Index nb = f - stride[ax];
        if (state[nb] == kFrozen) best = times.values[nb];
      }
      if (node[ax] + 1 < res) {
        Eigen::Index nb = f + stride[ax];
        if (state[nb] == kFrozen) best = std::min(best, times.values[nb]);
      }
      if (best < kInf) {
        upa[k] = best;
        uph[k] = times.spacing(ax);
        ++k;
      }
    }
    if (k == 0) return kInf;
    // Godunov quadratic: include axes in ascending upwind order while the
    // candidate stays above the next upwind value.
    std::vector<std::pair<double, double>> ah(k);
    for (int i = 0; i < k; ++i) ah[i] = {upa[i], uph[i]};
    std::sort(ah.begin(), ah.end());
    double t = ah[0].first + ah[0].second / s;
    double A = 0.0, B = 0.0, C = -1.0 / (s * s);
    {
      double w = 1.0 / (ah[0].second * ah[0].second);
      A += w;
      B += w * ah[0].first;
      C += w * ah[0].first * ah[0].first;
    }
    for (int i = 1; i < k; ++i) {
      if (t <= ah[i].first) break;
      double w = 1.0 / (ah[i].second * ah[i].second);
      A += w;
      B += w * ah[i].first;
      C += w * ah[i].first * ah[i].first;
      double disc = B * B - A * C;
      if (disc < 0.0) disc = 0.0;
      t = (B + std::sqrt(disc)) / A;
    }
    return t;
  };

  while (!heap.empty()) {
    auto [t, f] = heap.top();
    heap.pop();
    if (state[f] == kFrozen || t != times.values[f]) continue;
    state[f] = kFrozen;
    if (t < last_accepted - 1e-12) {
      throw std::logic_error("fmm_solve: causality violated, accepted time decreased");
    }
    last_accepted = std::max(last_accepted, t);

    std::vector<int> node = times.unflat(f);
    for (int ax = 0; ax < d; ++ax) {
      for (int dir = -1; dir <= 1; dir += 2) {
        int ni = node[ax] + dir;
        if (ni < 0 || ni >= res) continue;
        Eigen::Index nf = f + dir * stride[ax];
        if (state[nf] == kFrozen) continue;
        if (!(speed.values[nf] > 0.0)) continue;
        idx = node;
        idx[ax] = ni;
        double cand = solve_update(nf, idx);
        if (cand < times.values[nf]) {
          times.values[nf] = cand;
          state[nf] = kTrial;
          heap.emplace(cand, nf);
        }
      }
    }
  }
  return times;
}

double sample_time(const Grid& g, const Vec& q) {
  const int d = g.dims;
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int i = 0; i < d; ++i) {
    if (q[i] < g.bounds(i, 0) || q[i] > g.bounds(i, 1)) {
      throw std::domain_error("sample_time: query point is outside the grid");
    }
    double u = (q[i] - g.bounds(i, 0)) / g.spacing(i);
    int b = static_cast<int>(std::floor(u));
    b = std::clamp(b, 0, g.res - 2);
    base[i] = b;
    frac[i] = u - b;
  }
  double acc = 0.0;
  std::vector<int> corner(d);
  const int corners = 1 << d;
  for (int mask = 0; mask < corners; ++mask) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      bool hi = (mask >> i) & 1;
      corner[i] = base[i] + (hi ? 1 : 0);
      w *= hi ? frac[i] : 1.0 - frac[i];
    }
    if (w > 0.0) acc += w * g.at(corner);
  }
  return acc;
}

Vec sample_gradient(const Grid& g, const Vec& q) {
  Vec grad(g.dims);
  for (int i = 0; i < g.dims; ++i) {
    double delta = 0.5 * g.spacing(i);
    Vec a = q, b = q;
    a[i] = std::min(q[i] + delta, g.bounds(i, 1));
    b[i] = std::max(q[i] - delta, g.bounds(i, 0));
    double denom = a[i] - b[i];
    grad[i] = denom > 0.0 ? (sample_time(g, a) - sample_time(g, b)) / denom : 0.0;
  }
  return grad;
}

DescentResult descend_time(const Grid& times, const Vec& start, const Vec& source,
                           double step_scale, long max_steps) {
  DescentResult out;
  double min_h = kInf;
  for (int i = 0; i < times.dims; ++i) min_h = std::min(min_h, times.spacing(i));
  const double step = step_scale * min_h;

  Vec src_node = times.node_pos(times.nearest_node(source));
  Vec p = start;
  out.points.push_back(p);
  double best_time = sample_time(times, p);
  long since_improved = 0;

  for (long it = 0; it < max_steps; ++it) {
    if ((p - src_node).norm() <= min_h) {
      if ((p - src_node).norm() > 0.0) out.points.push_back(src_node);
      out.converged = true;
      return out;
    }
    Vec grad = sample_gradient(times, p);
    double gn = grad.norm();
    if (!(gn > 1e-12) || !std::isfinite(gn)) return out;
    p -= (step / gn) * grad;
    for (int i = 0; i < times.dims; ++i) {
      p[i] = std::clamp(p[i], times.bounds(i, 0), times.bounds(i, 1));
    }
    out.points.push_back(p);
    double t = sample_time(times, p);
    if (t < best_time - 1e-15) {
      best_time = t;
      since_improved = 0;
    } else if (++since_improved > 200) {
      return out;  // stuck on a plateau or oscillating
    }
  }
  return out;
}

namespace {
constexpr char kGridMagic[4] = {'E', 'P', 'T', 'G'};
constexpr std::uint32_t kGridVersion = 1;
}  // namespace

void save_grid(const Grid& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write grid file: " + path);
  out.write(kGridMagic, 4);
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto wf = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  w32(kGridVersion);
  w32(static_cast<std::uint32_t>(g.dims));
  w32(static_cast<std::uint32_t>(g.res));
  for (int i = 0; i < g.dims; ++i) {
    wf(g.bounds(i, 0));
    wf(g.bounds(i, 1));
  }
  for (double v : g.values) wf(v);
  if (!out) throw std::runtime_error("failed while writing grid file: " + path);
}

Grid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kGridMagic, 4) != 0) {
    throw std::runtime_error("not a grid file: " + path);
  }
  auto r32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto rf = [&]() {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  if (r32() != kGridVersion) throw std::runtime_error("unsupported grid version in " + path);
  Grid g;
  g.dims = static_cast<int>(r32());
  g.res = static_cast<int>(r32());
  if (g.dims < 1 || g.dims > 8 || g.res < 2) {
    throw std::runtime_error("grid header out of range in " + path);
  }
  g.bounds.resize(g.dims, 2);
  for (int i = 0; i < g.dims; ++i) {
    g.bounds(i, 0) = rf();
    g.bounds(i, 1) = rf();
  }
  g.values.resize(static_cast<std::size_t>(g.size()));
  for (double& v : g.values) v = rf();
  if (!in) throw std::runtime_error("grid file truncated: " + path);
  return g;
}

}  // namespace eikfield
