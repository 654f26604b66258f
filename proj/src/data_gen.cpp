#include "eoskit/data_gen.hpp"

#include "eoskit/rng.hpp"
#include "eoskit/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace eoskit::data {

namespace {
constexpr std::uint64_t kInputStream = 1;
constexpr std::uint64_t kTeacherStream = 2;

Vec normal_vec(Rng& rng, int size, double variance) {
  Vec v(size);
  double s = std::sqrt(variance);
  for (int i = 0; i < size; ++i) v(i) = s * rng.normal();
  return v;
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void bytes(const void* p, std::size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ull;
    }
  }
  void value(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(b >> (8 * i));
    bytes(le, 8);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};
}  // namespace

Mat gaussian_inputs(int n, int d, std::uint64_t seed) {
  if (n < 0 || d < 1) throw ConfigError("gaussian_inputs: need n >= 0 and d >= 1");
  Rng rng(seed, kInputStream);
  Mat X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}

Dataset gaussian_dataset(int n, int patches, int patch_dim, std::uint64_t seed) {
  if (patches < 1 || patch_dim < 1) throw ConfigError("gaussian_dataset: patch geometry must be positive");
  Dataset ds;
  ds.X = gaussian_inputs(n, patches * patch_dim, seed);
  ds.y = Vec::Zero(n);
  ds.patches = patches;
  ds.patch_dim = patch_dim;
  ds.generator = "gaussian";
  ds.seed = seed;
  return ds;
}

TeacherSpec linear_cnn_teacher(int N, int S, std::uint64_t seed) {
  if (N < 1 || S < 1) throw ConfigError("linear_cnn_teacher: N and S must be >= 1");
  Rng rng(seed, kTeacherStream);
  TeacherSpec t;
  t.kind = TeacherKind::LinearCnn;
  t.seed = seed;
  t.a_star = normal_vec(rng, N, 1.0 / N);
  t.w_star = normal_vec(rng, S, 1.0 / S);
  return t;
}

TeacherSpec fcn_teacher(int d, int depth, const std::vector<double>& variances, std::uint64_t seed) {
  if (depth < 2) throw ConfigError("fcn_teacher: depth must be >= 2");
  if (static_cast<int>(variances.size()) != depth) throw ConfigError("fcn_teacher: need one variance per layer");
  Rng rng(seed, kTeacherStream);
  TeacherSpec t;
  t.kind = TeacherKind::FcnTeacher;
  t.seed = seed;
  t.first = normal_vec(rng, d, variances[0] / d);
  for (int l = 1; l + 1 < depth; ++l) {
    t.hidden.push_back(normal_vec(rng, 1, variances[l]));
    t.strides.push_back(1);
  }
  t.readout = normal_vec(rng, 1, variances.back());
  return t;
}

TeacherSpec cnn_teacher(int patches, int patch_dim, const std::vector<int>& strides,
                        const std::vector<double>& variances, std::uint64_t seed) {
  if (variances.size() != strides.size() + 2) throw ConfigError("cnn_teacher: need one variance per layer");
  Rng rng(seed, kTeacherStream);
  TeacherSpec t;
  t.kind = TeacherKind::CnnTeacher;
  t.seed = seed;
  t.strides = strides;
  t.first = normal_vec(rng, patch_dim, variances[0] / patch_dim);
  int pixels = patches;
  for (std::size_t l = 0; l < strides.size(); ++l) {
    if (strides[l] < 1 || pixels % strides[l] != 0) throw ConfigError("cnn_teacher: stride does not divide pixel count");
    t.hidden.push_back(normal_vec(rng, strides[l], variances[l + 1] / strides[l]));
    pixels /= strides[l];
  }
  t.readout = normal_vec(rng, pixels, variances.back() / pixels);
  return t;
}

Vec make_target(const Dataset& data, const TeacherSpec& t) {
  const int n = data.n();
  Vec y(n);
  if (t.kind == TeacherKind::LinearCnn) {
    if (t.a_star.size() != data.patches || t.w_star.size() != data.patch_dim)
      throw ConfigError("make_target: linear teacher dimensions do not match the patch geometry");
    for (int mu = 0; mu < n; ++mu) {
      double s = 0.0;
      for (int i = 0; i < data.patches; ++i) s += t.a_star(i) * data.patch(mu, i).dot(t.w_star);
      y(mu) = s;
    }
    return y;
  }
  if (t.first.size() != data.patch_dim) throw ConfigError("make_target: teacher filter size does not match patch_dim");
  int final_pixels = data.patches;
  for (std::size_t l = 0; l < t.hidden.size(); ++l) {
    int s = t.strides.empty() ? 1 : t.strides[l];
    if (final_pixels % s != 0) throw ConfigError("make_target: stride does not divide pixel count");
    final_pixels /= s;
  }
  if (t.readout.size() != final_pixels) throw ConfigError("make_target: teacher readout size mismatch");
  for (int mu = 0; mu < n; ++mu) {
    Vec h(data.patches);
    for (int p = 0; p < data.patches; ++p) h(p) = data.patch(mu, p).dot(t.first);
    for (std::size_t l = 0; l < t.hidden.size(); ++l) {
      int s = t.strides.empty() ? 1 : t.strides[l];
      Vec up = Vec::Zero(h.size() / s);
      for (int j = 0; j < up.size(); ++j)
        for (int i = 0; i < s; ++i) up(j) += t.hidden[l](i) * std::erf(h(i + j * s));
      h = up;
    }
    double out = 0.0;
    for (int j = 0; j < h.size(); ++j) out += t.readout(j) * std::erf(h(j));
    y(mu) = out;
  }
  return y;
}

std::string digest(const Mat& X, const Vec& y) {
  Fnv f;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) f.value(X(i, j));
  for (Eigen::Index i = 0; i < y.size(); ++i) f.value(y(i));
  return f.hex();
}

std::string text_digest(const std::string& text) {
  Fnv f;
  f.bytes(text.data(), text.size());
  return f.hex();
}

std::string teacher_digest(const TeacherSpec& t) {
  Fnv f;
  auto add = [&](const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f.value(v(i));
  };
  add(t.a_star);
  add(t.w_star);
  add(t.first);
  for (const auto& h : t.hidden) add(h);
  add(t.readout);
  return f.hex();
}

void write_dataset(const std::filesystem::path& stem, const Dataset& ds, const TeacherSpec* teacher) {
  io::json meta = {{"n", ds.n()},
                   {"d", ds.d()},
                   {"patches", ds.patches},
                   {"patch_dim", ds.patch_dim},
                   {"generator", ds.generator},
                   {"seed", ds.seed},
                   {"digest", digest(ds.X, ds.y)}};
  if (teacher) meta["teacher_hash"] = teacher_digest(*teacher);
  io::write_matrix(stem.string() + ".X.bin", {{"rows", ds.n()}, {"cols", ds.d()}, {"layout", "row-major"}}, ds.X);
  io::write_matrix(stem.string() + ".y.bin", {{"rows", ds.n()}, {"cols", 1}, {"layout", "row-major"}}, ds.y);
  io::write_json(stem.string() + ".json", meta);
}

Dataset read_dataset(const std::filesystem::path& stem) {
  io::json meta = io::read_json(stem.string() + ".json");
  Dataset ds;
  ds.X = io::read_matrix(stem.string() + ".X.bin");
  Mat y = io::read_matrix(stem.string() + ".y.bin");
  ds.y = y.col(0);
  ds.patches = meta.at("patches").get<int>();
  ds.patch_dim = meta.at("patch_dim").get<int>();
  ds.generator = meta.value("generator", std::string());
  ds.seed = meta.value("seed", std::uint64_t{0});
  if (meta.contains("digest") && meta["digest"].get<std::string>() != digest(ds.X, ds.y))
    throw ConfigError("dataset digest mismatch for " + stem.string());
  return ds;
}

}  // namespace eoskit::data
