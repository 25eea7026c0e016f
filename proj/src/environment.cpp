#include "eikfield/environment.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "eikfield/rng.hpp"
#include "json.hpp"

namespace eikfield {

namespace {

double sphere_sdf(const Sphere& s, const Vec& q) {
  return (q - s.center).norm() - s.radius;
}

double box_sdf(const Box& b, const Vec& q) {
  Vec rel = (q - b.center).cwiseAbs() - b.half;
  double outside = rel.cwiseMax(0.0).norm();
  double inside = std::min(rel.maxCoeff(), 0.0);
  return outside + inside;
}

}  // namespace

double Environment::clearance(const Vec& q) const {
  if (!inside_bounds(q)) {
    throw std::domain_error("clearance: query point is outside the workspace bounds");
  }
  if (spheres.empty() && boxes.empty()) {
    // Empty workspace: clearance is the distance to the nearest bound.
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dims; ++i) {
      best = std::min(best, q[i] - bounds(i, 0));
      best = std::min(best, bounds(i, 1) - q[i]);
    }
    return best;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : spheres) best = std::min(best, sphere_sdf(s, q));
  for (const auto& b : boxes) best = std::min(best, box_sdf(b, q));
  return best;
}

double Environment::speed(const Vec& q) const {
  double c = std::clamp(clearance(q), d_min, d_max);
  return s_const / d_max * c;
}

double Environment::speed_alpha(const Vec& q, double alpha) const {
  return (1.0 - alpha) + alpha * speed(q);
}

bool Environment::inside_bounds(const Vec& q) const {
  for (int i = 0; i < dims; ++i) {
    if (q[i] < bounds(i, 0) || q[i] > bounds(i, 1)) return false;
  }
  return true;
}

Vec Environment::clip_to_bounds(const Vec& q) const {
  Vec out = q;
  for (int i = 0; i < dims; ++i) {
    out[i] = std::clamp(out[i], bounds(i, 0), bounds(i, 1));
  }
  return out;
}

double Environment::diameter() const {
  return (bounds.col(1) - bounds.col(0)).norm();
}

Mat Environment::fourier_code() const {
  Rng rng(fourier_seed);
  Mat code(dims, fourier_h);
  for (int i = 0; i < dims; ++i) {
    for (int j = 0; j < fourier_h; ++j) {
      code(i, j) = fourier_sigma * rng.normal();
    }
  }
  return code;
}

void Environment::validate() const {
  if (dims < 1) throw std::invalid_argument("environment: dims must be >= 1");
  if (bounds.rows() != dims || bounds.cols() != 2) {
    throw std::invalid_argument("environment: bounds must be dims x 2");
  }
  for (int i = 0; i < dims; ++i) {
    if (!(bounds(i, 0) < bounds(i, 1))) {
      throw std::invalid_argument("environment: lower bound must be below upper bound");
    }
  }
  if (!(d_min > 0.0) || !(d_max > d_min)) {
    throw std::invalid_argument("environment: need 0 < d_min < d_max");
  }
  if (!(s_const > 0.0)) throw std::invalid_argument("environment: s_const must be positive");
  if (fourier_h < 1) throw std::invalid_argument("environment: fourier_h must be >= 1");
  if (!(fourier_sigma > 0.0)) {
    throw std::invalid_argument("environment: fourier_sigma must be positive");
  }
  for (const auto& s : spheres) {
    if (s.center.size() != dims || !(s.radius > 0.0)) {
      throw std::invalid_argument("environment: malformed sphere obstacle");
    }
  }
  for (const auto& b : boxes) {
    if (b.center.size() != dims || b.half.size() != dims || !(b.half.minCoeff() > 0.0)) {
      throw std::invalid_argument("environment: malformed box obstacle");
    }
  }
}

namespace {

Vec to_vec(const nlohmann::json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json from_vec(const Vec& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

Environment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open environment file: " + path);
  nlohmann::json j;
  in >> j;

  Environment env;
  env.id = j.at("id").get<int>();
  env.dims = j.at("dims").get<int>();
  const auto& jb = j.at("bounds");
  if (static_cast<int>(jb.size()) != env.dims) {
    throw std::invalid_argument("environment: bounds entry count must equal dims");
  }
  env.bounds.resize(env.dims, 2);
  for (int i = 0; i < env.dims; ++i) {
    env.bounds(i, 0) = jb[i][0].get<double>();
    env.bounds(i, 1) = jb[i][1].get<double>();
  }
  for (const auto& jo : j.value("obstacles", nlohmann::json::array())) {
    const std::string type = jo.at("type").get<std::string>();
    if (type == "sphere") {
      Sphere s;
      s.center = to_vec(jo.at("center"));
      s.radius = jo.at("radius").get<double>();
      env.spheres.push_back(std::move(s));
    } else if (type == "box") {
      Box b;
      b.center = to_vec(jo.at("center"));
      b.half = to_vec(jo.at("half"));
      env.boxes.push_back(std::move(b));
    } else {
      throw std::invalid_argument("environment: unknown obstacle type '" + type + "'");
    }
  }
  env.d_min = j.value("d_min", 0.1);
  env.d_max = j.value("d_max", 1.0);
  env.s_const = j.value("s_const", 1.0);
  env.fourier_seed = j.value("fourier_seed", std::uint64_t{0});
  env.fourier_h = j.value("fourier_h", 64);
  env.fourier_sigma = j.value("fourier_sigma", 1.0);
  env.validate();
  return env;
}

void save_environment(const Environment& env, const std::string& path) {
  env.validate();
  nlohmann::json j;
  j["id"] = env.id;
  j["dims"] = env.dims;
  nlohmann::json jb = nlohmann::json::array();
  for (int i = 0; i < env.dims; ++i) {
    jb.push_back({env.bounds(i, 0), env.bounds(i, 1)});
  }
  j["bounds"] = jb;
  nlohmann::json jo = nlohmann::json::array();
  for (const auto& s : env.spheres) {
    jo.push_back({{"type", "sphere"}, {"center", from_vec(s.center)}, {"radius", s.radius}});
  }
  for (const auto& b : env.boxes) {
    jo.push_back({{"type", "box"}, {"center", from_vec(b.center)}, {"half", from_vec(b.half)}});
  }
  j["obstacles"] = jo;
  j["d_min"] = env.d_min;
  j["d_max"] = env.d_max;
  j["s_const"] = env.s_const;
  j["fourier_seed"] = env.fourier_seed;
  j["fourier_h"] = env.fourier_h;
  j["fourier_sigma"] = env.fourier_sigma;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write environment file: " + path);
  out << j.dump(2) << "\n";
}

Dataset sample_pairs(const Environment& env, Eigen::Index count, std::uint64_t seed,
                     double min_separation) {
  env.validate();
  if (count < 1) throw std::invalid_argument("sample_pairs: count must be >= 1");
  Rng rng(seed);

  auto draw_point = [&](Vec& q) {
    for (int i = 0; i < env.dims; ++i) {
      q[i] = rng.uniform(env.bounds(i, 0), env.bounds(i, 1));
    }
  };

  // Probe the point acceptance rate before committing to rejection sampling;
  // a cluttered environment where almost nothing is free would otherwise spin.
  const int probe_n = 2000;
  int probe_ok = 0;
  {
    Vec q(env.dims);
    for (int i = 0; i < probe_n; ++i) {
      draw_point(q);
      if (env.clearance(q) > 0.0) ++probe_ok;
    }
  }
  if (probe_ok < probe_n / 100) {
    throw std::runtime_error("sample_pairs: environment too dense, free-space acceptance below 1%");
  }

  Dataset ds;
  ds.dims = env.dims;
  ds.pairs.resize(count, 2 * env.dims);
  Vec qs(env.dims), qg(env.dims);
  const long max_attempts_per_pair = 100000;
  for (Eigen::Index k = 0; k < count; ++k) {
    long attempts = 0;
    for (;;) {
      if (++attempts > max_attempts_per_pair) {
        throw std::runtime_error("sample_pairs: could not find a separated free pair");
      }
      draw_point(qs);
      if (env.clearance(qs) <= 0.0) continue;
      draw_point(qg);
      if (env.clearance(qg) <= 0.0) continue;
      if ((qs - qg).norm() < min_separation) continue;
      break;
    }
    ds.pairs.row(k).head(env.dims) = qs;
    ds.pairs.row(k).tail(env.dims) = qg;
  }
  return ds;
}

namespace {

constexpr char kDatasetMagic[4] = {'E', 'P', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out.write(kDatasetMagic, 4);
  write_pod(out, kDatasetVersion);
  write_pod(out, static_cast<std::uint32_t>(ds.dims));
  write_pod(out, static_cast<std::uint64_t>(ds.pairs.rows()));
  for (Eigen::Index r = 0; r < ds.pairs.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.pairs.cols(); ++c) {
      write_pod(out, ds.pairs(r, c));
    }
  }
  if (!out) throw std::runtime_error("failed while writing dataset file: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw std::runtime_error("not a dataset file: " + path);
  }
  std::uint32_t version = 0, dims = 0;
  std::uint64_t count = 0;
  read_pod(in, version);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version in " + path);
  }
  read_pod(in, dims);
  read_pod(in, count);
  if (dims < 1 || dims > 64) throw std::runtime_error("dataset dims out of range in " + path);
  Dataset ds;
  ds.dims = static_cast<int>(dims);
  ds.pairs.resize(static_cast<Eigen::Index>(count), 2 * static_cast<Eigen::Index>(dims));
  for (Eigen::Index r = 0; r < ds.pairs.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.pairs.cols(); ++c) {
      read_pod(in, ds.pairs(r, c));
    }
  }
  if (!in) throw std::runtime_error("dataset file truncated: " + path);
  return ds;
}

}  // namespace eikfield
