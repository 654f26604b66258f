#include "eoskit/serialization.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace eoskit::io {

namespace {

static_assert(sizeof(double) == 8);

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

std::pair<Eigen::Index, Eigen::Index> shape_of(const json& h) {
  if (h.contains("rows") && h.contains("cols")) return {h["rows"].get<Eigen::Index>(), h["cols"].get<Eigen::Index>()};
  if (h.contains("n") && h.contains("pixels")) {
    Eigen::Index t = h["n"].get<Eigen::Index>() * h["pixels"].get<Eigen::Index>();
    return {t, t};
  }
  throw ConfigError("matrix header lacks rows/cols or n/pixels");
}

}  // namespace

void write_matrix(const std::filesystem::path& path, json header, const Mat& m) {
  if (!header.contains("dtype")) header["dtype"] = "f64";
  auto [r, c] = shape_of(header);
  if (r != m.rows() || c != m.cols()) throw ConfigError("matrix header shape does not match data");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(m(i, j)));
      out.write(reinterpret_cast<const char*>(&bits), 8);
    }
  if (!out) throw ConfigError("write failed for " + path.string());
}

Mat read_matrix(const std::filesystem::path& path, json* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  json h = json::parse(line);
  if (h.value("dtype", std::string("f64")) != "f64") throw ConfigError("unsupported dtype in " + path.string());
  auto [r, c] = shape_of(h);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 8);
      m(i, j) = std::bit_cast<double>(to_le(bits));
    }
  if (!in) throw ConfigError("truncated matrix file " + path.string());
  if (header_out) *header_out = h;
  return m;
}

json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Mat mat_from_json(const json& j) {
  Eigen::Index r = static_cast<Eigen::Index>(j.size());
  Eigen::Index c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != c) throw ConfigError("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

Vec vec_from_json(const json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(section + ": unknown key '" + it.key() + "'");
  }
}

json number_or_inf(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

double number_or_inf(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInf;
    throw ConfigError("expected a number or \"inf\", got '" + j.get<std::string>() + "'");
  }
  if (!j.is_number()) throw ConfigError("expected a number, got " + j.dump());
  return j.get<double>();
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace eoskit::io
