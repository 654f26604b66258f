#include "eoskit/cli.hpp"

#include "eoskit/serialization.hpp"

#include <algorithm>
#include <charconv>

namespace eoskit::cli {

using nlohmann::json;

bool OutputSection::wants(const std::string& f) const {
  return std::find(formats.begin(), formats.end(), f) != formats.end();
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

DataSection parse_data(const json& j) {
  io::reject_unknown_keys(j, {"generator", "n", "seed", "teacher_seed", "teacher_variances", "path"}, "data");
  DataSection d;
  d.generator = j.value("generator", d.generator);
  static const char* kGenerators[] = {"gaussian", "linear_cnn_teacher", "fcn_teacher", "cnn_teacher", "file"};
  if (std::none_of(std::begin(kGenerators), std::end(kGenerators), [&](const char* g) { return d.generator == g; }))
    throw ConfigError("data.generator: unknown generator '" + d.generator + "'");
  if (d.generator == "file") {
    d.path = j.at("path").get<std::string>();
  } else {
    d.n = j.at("n").get<int>();
    if (d.n < 0) throw ConfigError("data.n must be >= 0");
  }
  d.seed = j.value("seed", std::uint64_t{0});
  d.teacher_seed = j.value("teacher_seed", d.seed);
  d.teacher_variances = j.value("teacher_variances", std::vector<double>{});
  return d;
}

AnalyticSection parse_analytic(const json& j) {
  io::reject_unknown_keys(j, {"C", "q_train", "C_bar", "ek_samples", "ek_seed", "a_norm2", "w_norm2",
                              "include_fluctuation", "trace_loop"},
                          "analytic");
  AnalyticSection a;
  for (const auto& c : j.at("C")) a.channels.push_back(io::number_or_inf(c));
  if (a.channels.empty()) throw ConfigError("analytic.C must list at least one channel count");
  if (j.contains("q_train")) a.q_train = j["q_train"].get<double>();
  if (j.contains("C_bar")) a.c_bar = j["C_bar"].get<double>();
  a.ek_samples = j.value("ek_samples", a.ek_samples);
  a.ek_seed = j.value("ek_seed", a.ek_seed);
  if (j.contains("a_norm2")) a.a_norm2 = j["a_norm2"].get<double>();
  if (j.contains("w_norm2")) a.w_norm2 = j["w_norm2"].get<double>();
  a.include_fluctuation = j.value("include_fluctuation", true);
  a.trace_loop = j.value("trace_loop", false);
  if (a.ek_samples < 2) throw ConfigError("analytic.ek_samples must be >= 2");
  return a;
}

OutputSection parse_outputs(const json& j) {
  io::reject_unknown_keys(j, {"directory", "formats"}, "outputs");
  OutputSection o;
  o.directory = j.value("directory", o.directory.string());
  if (j.contains("formats")) o.formats = j["formats"].get<std::vector<std::string>>();
  for (const auto& f : o.formats)
    if (f != "json" && f != "csv" && f != "kernels") throw ConfigError("outputs.formats: unknown format '" + f + "'");
  return o;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  io::reject_unknown_keys(j, {"schema", "model", "data", "solver", "oracle", "analytic", "outputs"}, "config");
  if (!j.contains("schema")) throw ConfigError("config: missing 'schema' version field");
  ExperimentConfig c;
  c.schema = j["schema"].get<int>();
  if (c.schema != kSchemaVersion)
    throw ConfigError("config: unsupported schema " + std::to_string(c.schema) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  c.model_json = j.at("model");
  c.model = eos::spec_from_json(c.model_json);
  c.data = parse_data(j.at("data"));
  if (j.contains("solver")) c.solver = eos::options_from_json(j["solver"]);
  if (j.contains("oracle")) {
    c.oracle_json = j["oracle"];
    langevin::langevin_config_from_json(*c.oracle_json, c.model);  // validates keys early
  }
  if (j.contains("analytic")) c.analytic = parse_analytic(j["analytic"]);
  if (j.contains("outputs")) c.outputs = parse_outputs(j["outputs"]);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

BuiltData build_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  const auto& m = cfg.model;
  BuiltData out;
  if (d.generator == "file") {
    out.dataset = data::read_dataset(d.path);
  } else {
    out.dataset = data::gaussian_dataset(d.n, m.patches, m.patch_dim, d.seed);
    std::vector<double> tv = d.teacher_variances.empty() ? m.variances : d.teacher_variances;
    if (d.generator == "linear_cnn_teacher") {
      out.teacher = data::linear_cnn_teacher(m.patches, m.patch_dim, d.teacher_seed);
    } else if (d.generator == "fcn_teacher") {
      if (m.patches != 1) throw ConfigError("data.generator: fcn_teacher needs a single-patch model");
      out.teacher = data::fcn_teacher(m.patch_dim, m.depth, tv, d.teacher_seed);
    } else if (d.generator == "cnn_teacher") {
      out.teacher = data::cnn_teacher(m.patches, m.patch_dim, m.strides, tv, d.teacher_seed);
    }
    if (out.teacher) {
      out.dataset.y = data::make_target(out.dataset, *out.teacher);
      out.dataset.generator = d.generator;
    }
  }
  if (out.dataset.patches != m.patches || out.dataset.patch_dim != m.patch_dim)
    throw ConfigError("data: patch geometry does not match the model section");
  return out;
}

std::string experiment_digest(const ExperimentConfig& cfg, const data::Dataset& ds) {
  return data::text_digest(eos::to_json(cfg.model).dump()) + "-" + data::digest(ds.X, ds.y);
}

Tolerances load_tolerances(const std::filesystem::path& path) {
  Tolerances t;
  if (path.empty()) return t;
  json j = io::read_json(path);
  io::reject_unknown_keys(j, {"train_mse_over_s2", "top_sigma", "alpha"}, "tolerances");
  t.train_mse = j.value("train_mse_over_s2", t.train_mse);
  t.top_sigma = j.value("top_sigma", t.top_sigma);
  t.alpha = j.value("alpha", t.alpha);
  if (!(t.train_mse > 0 && t.top_sigma > 0 && t.alpha > 0)) throw ConfigError("tolerances must be positive");
  return t;
}

}  // namespace eoskit::cli
