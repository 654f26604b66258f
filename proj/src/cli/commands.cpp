#include "eoskit/cli.hpp"

#include "eoskit/gp_inference.hpp"
#include "eoskit/serialization.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace eoskit::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::trunc) {
    if (!out_) throw ConfigError("cannot open " + path.string() + " for writing");
    row_strings(header);
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

void prepare_dir(const fs::path& dir) { fs::create_directories(dir); }

json quantity(double value, double stderr_value) { return {{"value", value}, {"stderr", stderr_value}}; }

// Infinite-width reference on the same data.
json gp_reference(const eos::NetworkSpec& spec, const data::Dataset& ds) {
  eos::NetworkSpec gp = spec;
  std::fill(gp.widths.begin(), gp.widths.end(), kInf);
  eos::Solver solver(gp, ds);
  eos::EoSState s = solver.gp_state();
  return {{"train_mse_over_s2", s.posterior.train_mse / spec.noise},
          {"top_sigma", spec.variances[0] / spec.patch_dim},
          {"alpha", s.posterior.alpha}};
}

void write_outputs_json(const OutputSection& o, const fs::path& path, const json& j) {
  if (o.wants("json")) io::write_json(path, j);
}

}  // namespace

// ------------------------------------------------------------------ eos-solve

void cmd_eos_solve(const ExperimentConfig& cfg) {
  BuiltData bd = build_data(cfg);
  const auto& ds = bd.dataset;
  if (ds.n() < 1) throw ConfigError("eos-solve: needs at least one training point");
  const fs::path dir = cfg.outputs.directory;
  prepare_dir(dir);

  eos::Solver solver(cfg.model, ds, cfg.solver);
  eos::SolveResult res = solver.solve();
  const eos::EoSState& s = res.state;

  if (cfg.outputs.wants("csv")) {
    CsvWriter trace(dir / "residuals.csv", {"iteration", "step_metric"});
    for (std::size_t i = 0; i < res.trace.size(); ++i) trace.row_strings({std::to_string(i), fmt(res.trace[i])});
    CsvWriter sweep(dir / "sweep.csv", {"width", "alpha_train", "l_star", "chi", "train_mse_over_s2", "iterations",
                                        "newton_steps", "step_residual", "inverse_residual", "converged"});
    for (const auto& r : res.steps)
      sweep.row_strings({fmt(r.width), fmt(r.alpha), fmt(r.top_sigma), fmt(r.chi), fmt(r.train_mse / cfg.model.noise),
                         std::to_string(r.iterations), std::to_string(r.newton_steps), fmt(r.step_residual),
                         fmt(r.inverse_residual), r.converged ? "1" : "0"});
  }
  if (cfg.outputs.wants("kernels")) {
    auto write = [&](const std::string& name, const Mat& m, int layer) {
      io::write_matrix(dir / (name + ".bin"), {{"rows", m.rows()}, {"cols", m.cols()}, {"layer", layer}}, m);
    };
    write("Sigma", s.Sigma, 1);
    for (std::size_t i = 0; i < s.K.size(); ++i) {
      write("K" + std::to_string(i + 2), s.K[i], static_cast<int>(i) + 2);
      write("Q" + std::to_string(i + 2), s.Q[i], static_cast<int>(i) + 2);
    }
    write("Qf", s.Qf, cfg.model.depth);
  }

  json steps = json::array();
  for (const auto& r : res.steps) steps.push_back(eos::to_json(r));
  const double top = eos::top_eigenvalue(s.Sigma);
  json summary = {{"schema", kSchemaVersion},
                  {"kind", "theory"},
                  {"digest", experiment_digest(cfg, ds)},
                  {"model", eos::to_json(cfg.model)},
                  {"solver", eos::to_json(cfg.solver)},
                  {"partial", !s.converged},
                  {"converged", s.converged},
                  {"chi", s.chi},
                  {"mf_diagnostic", s.mf},
                  {"psd_clips", s.psd_clips},
                  {"quantities",
                   {{"train_mse_over_s2", quantity(s.posterior.train_mse / cfg.model.noise, 0.0)},
                    {"top_sigma", quantity(top, 0.0)},
                    {"alpha", quantity(s.posterior.alpha, 0.0)}}},
                  {"gp", gp_reference(cfg.model, ds)},
                  {"steps", steps}};
  write_outputs_json(cfg.outputs, dir / "summary.json", summary);
  if (!s.converged)
    throw NumericalError("eos-solve: no convergence at width " + fmt(s.width) + " (step metric " +
                         fmt(s.step_residual) + "); partial outputs in " + dir.string());
}

// ------------------------------------------------------------------ analytic

void cmd_analytic(const ExperimentConfig& cfg, std::ostream& warn) {
  if (!cfg.analytic) throw ConfigError("analytic: missing 'analytic' section");
  const auto& a = *cfg.analytic;
  const auto& m = cfg.model;
  if (m.depth != 2 || m.activations[0] != kernel::ActivationKind::Erf)
    throw ConfigError("analytic: requires a two-layer erf model");
  BuiltData bd = build_data(cfg);
  const int n = bd.dataset.n();
  if (n < 1) throw ConfigError("analytic: needs n >= 1");

  analytic::TwoLayerConfig base;
  base.n = n;
  base.S = m.patch_dim;
  base.N = m.patches;
  base.sw2 = m.variances[0];
  base.sa2 = m.variances[1];
  base.s2 = m.noise;
  base.include_fluctuation = a.include_fluctuation;
  base.trace_loop = a.trace_loop;
  if (a.a_norm2 && a.w_norm2) {
    base.a_norm2 = *a.a_norm2;
    base.w_norm2 = *a.w_norm2;
  } else if (bd.teacher && bd.teacher->kind == data::TeacherKind::LinearCnn) {
    base.a_norm2 = a.a_norm2.value_or(bd.teacher->a_star.squaredNorm());
    base.w_norm2 = a.w_norm2.value_or(bd.teacher->w_star.squaredNorm());
  } else {
    throw ConfigError("analytic: give a_norm2 and w_norm2 or use the linear_cnn_teacher generator");
  }
  base.C = kInf;
  base.validate();

  double cbar = 0.0;
  std::optional<gp::EKSpectrum> spectrum;
  if (a.c_bar) {
    cbar = *a.c_bar;
  } else {
    Mat sample = data::gaussian_inputs(a.ek_samples, m.patches * m.patch_dim, a.ek_seed);
    gp::KernelFn fn = [&](const Mat& Xa, const Mat&) { return eos::gp_output_kernel(m, Xa); };
    spectrum = gp::ek_spectrum(fn, sample, n, m.noise);
    cbar = spectrum->C_bar;
  }
  double q = 1.0;
  if (a.q_train) {
    q = *a.q_train;
  } else {
    analytic::TwoLayerSolution gp0 = analytic::solve_alpha(base, 1.0, cbar);
    gp::EkAlpha ek = gp::ek_alpha(gp0.lambda_y, n, m.noise, 1.0);
    q = gp::q_train(ek.alpha_ek, cbar, m.noise);
  }

  std::vector<double> cs;
  for (double c : a.channels) {
    if (std::find(cs.begin(), cs.end(), c) != cs.end()) {
      warn << "warning: duplicate C value " << fmt(c) << " ignored\n";
      continue;
    }
    cs.push_back(c);
  }
  std::sort(cs.begin(), cs.end(), std::greater<>());

  const analytic::TwoLayerSolution inf = analytic::solve_alpha(base, q, cbar);
  std::vector<analytic::TwoLayerSolution> sols(cs.size());
  std::vector<double> first(cs.size());
  parallel_for(cs.size(), [&](std::size_t i) {
    analytic::TwoLayerConfig c = base;
    c.C = cs[i];
    sols[i] = analytic::solve_alpha(c, q, cbar);
    first[i] = analytic::first_order_alpha(c, q, cbar);
  });

  const fs::path dir = cfg.outputs.directory;
  prepare_dir(dir);
  if (cfg.outputs.wants("csv")) {
    CsvWriter t(dir / "analytic.csv", {"C", "alpha", "alpha_ratio", "alpha_first_order", "l_star", "l_iso", "chi2",
                                       "lambda_y", "roots_found"});
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const auto& s = sols[i];
      t.row_strings({fmt(cs[i]), fmt(s.alpha), fmt(s.alpha / inf.alpha), fmt(first[i]), fmt(s.l_star), fmt(s.l_iso),
                     fmt(s.chi2), fmt(s.lambda_y), std::to_string(s.roots_found)});
    }
  }
  const double lam = analytic::lambda_inf(base);
  json rows = json::array();
  for (std::size_t i = 0; i < cs.size(); ++i) {
    json r = analytic::to_json(sols[i]);
    r["C"] = io::number_or_inf(cs[i]);
    r["alpha_first_order"] = first[i];
    rows.push_back(r);
  }
  json summary = {{"schema", kSchemaVersion},
                  {"kind", "analytic"},
                  {"digest", experiment_digest(cfg, bd.dataset)},
                  {"lambda_inf", lam},
                  {"alpha_inf", inf.alpha},
                  {"alpha2_n2_lambda_inf", inf.alpha * inf.alpha * double(n) * double(n) * lam},
                  {"q_train", q},
                  {"C_bar", cbar},
                  {"a_norm2", base.a_norm2},
                  {"w_norm2", base.w_norm2},
                  {"rows", rows}};
  // chi2 * C, i.e. the channel count at which chi2 = 1 for the C = inf alpha.
  {
    analytic::TwoLayerConfig unit = base;
    unit.C = 1.0;
    summary["chi2_coefficient"] = analytic::chi2(unit, inf.alpha, lam);
  }
  if (spectrum) summary["ek_spectrum"] = {{"M", spectrum->M}, {"retained", spectrum->retained}, {"C_bar", cbar}};
  write_outputs_json(cfg.outputs, dir / "summary.json", summary);
}

// ------------------------------------------------------------------ langevin

void cmd_langevin(const ExperimentConfig& cfg) {
  json oj = cfg.oracle_json.value_or(json::object());
  langevin::LangevinConfig lc = langevin::langevin_config_from_json(oj, cfg.model);
  BuiltData bd = build_data(cfg);
  const auto& ds = bd.dataset;
  const fs::path dir = cfg.outputs.directory;
  prepare_dir(dir);
  if (oj.value("teacher_direction", true) && bd.teacher) {
    const auto& t = *bd.teacher;
    lc.directions.push_back(t.kind == data::TeacherKind::LinearCnn ? t.w_star : t.first);
  }
  if (oj.value("write_logs", true)) lc.log_dir = dir / "logs";

  langevin::EquilibriumStats st = langevin::sample_equilibrium(lc, ds);
  const int n = ds.n();

  write_outputs_json(cfg.outputs, dir / "stats.json", langevin::to_json(st));
  if (cfg.outputs.wants("csv")) {
    CsvWriter seeds(dir / "seeds.csv", {"seed", "final_lr", "mean_train_mse", "fbar_mse", "alpha", "top_sigma",
                                        "snapshots"});
    for (const auto& r : st.seeds)
      seeds.row_strings({std::to_string(r.seed), fmt(r.final_lr), fmt(r.mean_train_mse), fmt(r.fbar_mse),
                         fmt(r.alpha), fmt(r.top_sigma), std::to_string(r.snapshots)});
    CsvWriter lv(dir / "layer_variances.csv", {"layer", "expected", "empirical", "stderr", "within_3se"});
    for (const auto& v : st.layer_variances)
      lv.row_strings({std::to_string(v.layer), fmt(v.expected), fmt(v.empirical), fmt(v.stderr_weights),
                      v.within_3se ? "1" : "0"});
    if (n > 0) {
      CsvWriter tr(dir / "mse_trace.csv", {"snapshot", "train_mse"});
      for (std::size_t i = 0; i < st.mse_trace.size(); ++i) tr.row_strings({std::to_string(i), fmt(st.mse_trace[i])});
    }
  }

  json summary = {{"schema", kSchemaVersion},
                  {"kind", "oracle"},
                  {"digest", experiment_digest(cfg, ds)},
                  {"model", eos::to_json(cfg.model)},
                  {"stationary", st.stationary},
                  {"seeds_agree", st.seeds_agree}};
  json q = {{"top_sigma", quantity(st.top_sigma, st.top_sigma_stderr)}};
  if (n > 0) {
    std::vector<double> mse;
    for (const auto& r : st.seeds) mse.push_back(r.fbar_mse / cfg.model.noise);
    q["train_mse_over_s2"] = quantity(st.train_mse / cfg.model.noise, langevin::seed_mean(mse).stderr_seeds);
    q["alpha"] = quantity(st.alpha, st.alpha_stderr);
    summary["gp"] = gp_reference(cfg.model, ds);
  }
  summary["quantities"] = q;
  write_outputs_json(cfg.outputs, dir / "summary.json", summary);

  if (n == 0) {
    for (const auto& v : st.layer_variances)
      if (!v.within_3se)
        throw NumericalError("langevin: stationary variance of layer " + std::to_string(v.layer) + " is " +
                             fmt(v.empirical) + ", expected " + fmt(v.expected) + " +- 3 x " + fmt(v.stderr_weights));
  }
}

// ------------------------------------------------------------------ compare

void cmd_compare(const fs::path& a, const fs::path& b, const Tolerances& tol, std::ostream& out) {
  json ja = io::read_json(a / "summary.json"), jb = io::read_json(b / "summary.json");
  for (const json* j : {&ja, &jb})
    if (!j->contains("digest") || !j->contains("quantities"))
      throw ConfigError("compare: summary.json lacks digest or quantities");
  if (ja["digest"] != jb["digest"])
    throw ComparisonError("compare: experiment digests differ (" + ja["digest"].get<std::string>() + " vs " +
                          jb["digest"].get<std::string>() + "); refusing to compare");
  // The oracle side is the empirical column when exactly one side is an oracle run.
  const bool swap = ja.value("kind", "") == "oracle" && jb.value("kind", "") != "oracle";
  const json& emp = swap ? ja : jb;
  const json& pred = swap ? jb : ja;
  const json gp = pred.contains("gp") ? pred["gp"] : emp.value("gp", json::object());

  struct Row {
    const char* key;
    double tol;
  };
  const Row rows[] = {{"train_mse_over_s2", tol.train_mse}, {"top_sigma", tol.top_sigma}, {"alpha", tol.alpha}};
  std::ostringstream csv;
  csv << "quantity,empirical,predicted,gp_value,empirical_over_gp,predicted_over_gp,stderr,tolerance,pass\n";
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    if (!emp["quantities"].contains(r.key) || !pred["quantities"].contains(r.key)) continue;
    double e = emp["quantities"][r.key]["value"].get<double>();
    double p = pred["quantities"][r.key]["value"].get<double>();
    double se = emp["quantities"][r.key].value("stderr", 0.0);
    double g = gp.contains(r.key) ? gp[r.key].get<double>() : std::nan("");
    bool pass = std::abs(e - p) <= r.tol * std::abs(p);
    if (!pass) failed.push_back(r.key);
    csv << r.key << ',' << fmt(e) << ',' << fmt(p) << ',' << fmt(g) << ',' << fmt(e / g) << ',' << fmt(p / g) << ','
        << fmt(se) << ',' << fmt(r.tol) << ',' << (pass ? "pass" : "fail") << '\n';
  }
  out << csv.str();
  out.flush();
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw ComparisonError("compare: outside tolerance: " + names);
  }
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const ComparisonError& e) {
    err << "comparison failure: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace eoskit::cli
