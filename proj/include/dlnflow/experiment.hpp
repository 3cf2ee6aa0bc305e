#pragma once

// Experiment specs, their config-file form, and the dispatcher behind the CLI.

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlnflow/amp.hpp"
#include "dlnflow/csv.hpp"
#include "dlnflow/dmft.hpp"
#include "dlnflow/errors.hpp"
#include "dlnflow/fixedpoint.hpp"
#include "dlnflow/gfsim.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/protocols.hpp"
#include "dlnflow/quadrature.hpp"
#include "dlnflow/rates.hpp"
#include "dlnflow/svg.hpp"

namespace dlnflow {

using json = nlohmann::json;

// Bad configuration or arguments (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { simulate, dmft, fixed_point, amp, rate, timescale, fit_rate, preset, compare };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::dmft: return "dmft";
    case Command::fixed_point: return "fixed-point";
    case Command::amp: return "amp";
    case Command::rate: return "rate";
    case Command::timescale: return "timescale";
    case Command::fit_rate: return "fit-rate";
    case Command::preset: return "preset";
    case Command::compare: return "compare";
  }
  return "?";
}

inline Command parse_command(const std::string& s) {
  for (Command c : {Command::simulate, Command::dmft, Command::fixed_point, Command::amp,
                    Command::rate, Command::timescale, Command::fit_rate, Command::preset,
                    Command::compare})
    if (s == to_string(c)) return c;
  throw ConfigError("unknown command: " + s);
}

struct Numerics {
  double step = 0.1;
  double t_max = 1000.0;
  double record_every = 0.0;  // 0 records every step
  Eigen::Index M = 2000;
  Eigen::Index d = 500;
  std::vector<std::uint64_t> seeds{0};
  double tol = 1e-3;
  double damping = 0.5;
  int max_outer = 100;
  std::string design = "gaussian";
  std::string integrator = "euler";
  bool adaptive = false;
  double cfl = 0.5;
  bool w_form = false;
  double snapshot_every = 0.0;
  unsigned threads = 0;

  friend bool operator==(const Numerics&, const Numerics&) = default;
};

struct IoOptions {
  std::string out_dir = "out";
  std::vector<std::string> formats{"csv"};
  bool plot = false;

  friend bool operator==(const IoOptions&, const IoOptions&) = default;
};

struct DataSource {
  std::string path;
  bool normalize = true;
  bool header = false;
  Eigen::Index n_sub = 0;
  Eigen::Index d_sub = 0;

  friend bool operator==(const DataSource&, const DataSource&) = default;
};

// Command-specific knobs; unused ones are ignored by the other commands.
struct Params {
  std::string preset;
  std::string fp_case;  // empty: inferred from (delta, lambda)
  std::string penalty = "l1";
  int amp_iters = 100;
  std::vector<double> lambdas{1e-2, 1e-3, 1e-4};
  std::vector<double> alphas;
  std::string timescale = "grokking";
  double Delta = 0.0;
  double w_eff = 0.0;
  std::string input;
  std::string input_b;
  std::optional<double> e_inf;
  std::optional<double> t_lo;
  std::optional<double> t_hi;
  double edge_power = 0.0;
  double noise_floor = 1e-10;
  std::string column = "e_train";
  double rel_tol = 0.05;
  double se_mult = 3.0;
  bool fit = false;
  int law_samples = 0;
  bool dump_kernels = false;

  friend bool operator==(const Params&, const Params&) = default;
};

struct ExperimentSpec {
  Command command = Command::simulate;
  ModelConfig cfg;
  Numerics numerics;
  IoOptions io;
  std::optional<DataSource> data;
  Params params;

  friend bool operator==(const ExperimentSpec&, const ExperimentSpec&) = default;
};

struct RunResult {
  ExperimentSpec spec;
  std::vector<std::string> manifest;
  double wall_time = 0.0;
  std::map<std::string, double> summary;
  std::vector<std::string> notes;
  int exit_code = 0;
};

// ---------------------------------------------------------------------------
// JSON form

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, key, v);
  out = v;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline json target_to_json(const TargetDist& t) {
  if (t.kind == TargetDist::Kind::gaussian) return {{"kind", "gaussian"}, {"variance", t.variance}};
  json atoms = json::array();
  for (const auto& a : t.atoms) atoms.push_back({a.value, a.prob});
  return {{"kind", "discrete"}, {"atoms", atoms}};
}

inline TargetDist target_from_json(const json& j) {
  detail::check_keys(j, {"kind", "atoms", "variance", "p", "value"}, "target");
  std::string kind = "discrete";
  detail::read(j, "kind", kind);
  try {
    if (kind == "gaussian") {
      double var = 1.0;
      detail::read(j, "variance", var);
      return TargetDist::gaussian(var);
    }
    if (kind == "bernoulli") {
      double p = 0.1, value = 1.0;
      detail::read(j, "p", p);
      detail::read(j, "value", value);
      return TargetDist::bernoulli(p, value);
    }
    if (kind == "discrete") {
      std::vector<Atom> atoms;
      if (!j.contains("atoms")) throw ConfigError("discrete target needs 'atoms'");
      for (const auto& a : j.at("atoms")) {
        if (!a.is_array() || a.size() != 2) throw ConfigError("target atom must be [value, prob]");
        atoms.push_back({a[0].get<double>(), a[1].get<double>()});
      }
      return TargetDist::discrete(atoms);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("target: ") + e.what());
  }
  throw ConfigError("unknown target kind: " + kind);
}

inline json to_json(const ModelConfig& c) {
  return {{"delta", c.delta},   {"alpha", c.alpha},   {"lambda", c.lambda},
          {"sigma2", c.sigma2}, {"layers", c.layers}, {"truncation", detail::opt_json(c.truncation)},
          {"target", target_to_json(c.target)}};
}

inline ModelConfig model_from_json(const json& j, ModelConfig c = {}) {
  detail::check_keys(j, {"delta", "alpha", "lambda", "sigma2", "layers", "truncation", "target"},
                     "model");
  detail::read(j, "delta", c.delta);
  detail::read(j, "alpha", c.alpha);
  detail::read(j, "lambda", c.lambda);
  detail::read(j, "sigma2", c.sigma2);
  detail::read(j, "layers", c.layers);
  detail::read_opt(j, "truncation", c.truncation);
  if (j.contains("target")) c.target = target_from_json(j.at("target"));
  return c;
}

inline json to_json(const Numerics& n) {
  return {{"step", n.step},
          {"t_max", n.t_max},
          {"record_every", n.record_every},
          {"M", n.M},
          {"d", n.d},
          {"seeds", n.seeds},
          {"tol", n.tol},
          {"damping", n.damping},
          {"max_outer", n.max_outer},
          {"design", n.design},
          {"integrator", n.integrator},
          {"adaptive", n.adaptive},
          {"cfl", n.cfl},
          {"w_form", n.w_form},
          {"snapshot_every", n.snapshot_every},
          {"threads", n.threads}};
}

inline Numerics numerics_from_json(const json& j, Numerics n = {}) {
  detail::check_keys(j,
                     {"step", "t_max", "record_every", "M", "d", "seeds", "tol", "damping",
                      "max_outer", "design", "integrator", "adaptive", "cfl", "w_form",
                      "snapshot_every", "threads"},
                     "numerics");
  detail::read(j, "step", n.step);
  detail::read(j, "t_max", n.t_max);
  detail::read(j, "record_every", n.record_every);
  detail::read(j, "M", n.M);
  detail::read(j, "d", n.d);
  detail::read(j, "seeds", n.seeds);
  detail::read(j, "tol", n.tol);
  detail::read(j, "damping", n.damping);
  detail::read(j, "max_outer", n.max_outer);
  detail::read(j, "design", n.design);
  detail::read(j, "integrator", n.integrator);
  detail::read(j, "adaptive", n.adaptive);
  detail::read(j, "cfl", n.cfl);
  detail::read(j, "w_form", n.w_form);
  detail::read(j, "snapshot_every", n.snapshot_every);
  detail::read(j, "threads", n.threads);
  return n;
}

inline json to_json(const IoOptions& io) {
  return {{"out_dir", io.out_dir}, {"formats", io.formats}, {"plot", io.plot}};
}

inline IoOptions io_from_json(const json& j, IoOptions io = {}) {
  detail::check_keys(j, {"out_dir", "formats", "plot"}, "io");
  detail::read(j, "out_dir", io.out_dir);
  detail::read(j, "formats", io.formats);
  detail::read(j, "plot", io.plot);
  return io;
}

inline json to_json(const DataSource& d) {
  return {{"path", d.path},
          {"normalize", d.normalize},
          {"header", d.header},
          {"n_sub", d.n_sub},
          {"d_sub", d.d_sub}};
}

inline DataSource data_from_json(const json& j, DataSource d = {}) {
  detail::check_keys(j, {"path", "normalize", "header", "n_sub", "d_sub"}, "data");
  detail::read(j, "path", d.path);
  detail::read(j, "normalize", d.normalize);
  detail::read(j, "header", d.header);
  detail::read(j, "n_sub", d.n_sub);
  detail::read(j, "d_sub", d.d_sub);
  return d;
}

inline json to_json(const Params& p) {
  return {{"preset", p.preset},
          {"case", p.fp_case},
          {"penalty", p.penalty},
          {"amp_iters", p.amp_iters},
          {"lambdas", p.lambdas},
          {"alphas", p.alphas},
          {"timescale", p.timescale},
          {"Delta", p.Delta},
          {"w_eff", p.w_eff},
          {"input", p.input},
          {"input_b", p.input_b},
          {"e_inf", detail::opt_json(p.e_inf)},
          {"t_lo", detail::opt_json(p.t_lo)},
          {"t_hi", detail::opt_json(p.t_hi)},
          {"edge_power", p.edge_power},
          {"noise_floor", p.noise_floor},
          {"column", p.column},
          {"rel_tol", p.rel_tol},
          {"se_mult", p.se_mult},
          {"fit", p.fit},
          {"law_samples", p.law_samples},
          {"dump_kernels", p.dump_kernels}};
}

inline Params params_from_json(const json& j, Params p = {}) {
  detail::check_keys(j,
                     {"preset", "case", "penalty", "amp_iters", "lambdas", "alphas", "timescale",
                      "Delta", "w_eff", "input", "input_b", "e_inf", "t_lo", "t_hi", "edge_power",
                      "noise_floor", "column", "rel_tol", "se_mult", "fit", "law_samples",
                      "dump_kernels"},
                     "params");
  detail::read(j, "preset", p.preset);
  detail::read(j, "case", p.fp_case);
  detail::read(j, "penalty", p.penalty);
  detail::read(j, "amp_iters", p.amp_iters);
  detail::read(j, "lambdas", p.lambdas);
  detail::read(j, "alphas", p.alphas);
  detail::read(j, "timescale", p.timescale);
  detail::read(j, "Delta", p.Delta);
  detail::read(j, "w_eff", p.w_eff);
  detail::read(j, "input", p.input);
  detail::read(j, "input_b", p.input_b);
  detail::read_opt(j, "e_inf", p.e_inf);
  detail::read_opt(j, "t_lo", p.t_lo);
  detail::read_opt(j, "t_hi", p.t_hi);
  detail::read(j, "edge_power", p.edge_power);
  detail::read(j, "noise_floor", p.noise_floor);
  detail::read(j, "column", p.column);
  detail::read(j, "rel_tol", p.rel_tol);
  detail::read(j, "se_mult", p.se_mult);
  detail::read(j, "fit", p.fit);
  detail::read(j, "law_samples", p.law_samples);
  detail::read(j, "dump_kernels", p.dump_kernels);
  return p;
}

inline json to_json(const ExperimentSpec& s) {
  json j = {{"command", to_string(s.command)},
            {"model", to_json(s.cfg)},
            {"numerics", to_json(s.numerics)},
            {"io", to_json(s.io)},
            {"params", to_json(s.params)}};
  j["data"] = s.data ? to_json(*s.data) : json(nullptr);
  return j;
}

// Keys present in `j` override `base`; absent keys keep base values.
inline ExperimentSpec spec_from_json(const json& j, ExperimentSpec s = {}) {
  detail::check_keys(j, {"command", "model", "numerics", "io", "data", "params"}, "config");
  if (j.contains("command")) {
    std::string c;
    detail::read(j, "command", c);
    s.command = parse_command(c);
  }
  if (j.contains("model")) s.cfg = model_from_json(j.at("model"), s.cfg);
  if (j.contains("numerics")) s.numerics = numerics_from_json(j.at("numerics"), s.numerics);
  if (j.contains("io")) s.io = io_from_json(j.at("io"), s.io);
  if (j.contains("params")) s.params = params_from_json(j.at("params"), s.params);
  if (j.contains("data")) {
    if (j.at("data").is_null()) s.data.reset();
    else s.data = data_from_json(j.at("data"), s.data.value_or(DataSource{}));
  }
  return s;
}

inline std::string serialize_spec(const ExperimentSpec& s) { return to_json(s).dump(2) + "\n"; }

inline ExperimentSpec parse_spec(const std::string& text, ExperimentSpec base = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return spec_from_json(j, std::move(base));
}

inline ExperimentSpec load_spec(const std::string& path, ExperimentSpec base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Defaults

inline ExperimentSpec default_spec(Command c) {
  ExperimentSpec s;
  s.command = c;
  if (c == Command::dmft) {
    s.numerics.step = 0.05;
    s.numerics.t_max = 10.0;
  }
  if (c == Command::rate) s.numerics.t_max = 200.0;
  if (c == Command::timescale) {
    s.numerics.d = 400;
    s.numerics.seeds = {0, 1, 2};
  }
  return s;
}

inline std::vector<std::string> preset_names() {
  return {"fig2a", "fig2b", "fig4b", "fig4c", "fig5b", "fig_interp", "dmft_vs_sim", "fig_binary"};
}

inline ExperimentSpec preset_spec(const std::string& name) {
  ExperimentSpec s;
  s.command = Command::preset;
  s.params.preset = name;
  auto& n = s.numerics;
  auto& c = s.cfg;
  if (name == "fig2a") {
    c.delta = 0.5;
    s.params.alphas = {0.25, 0.5, 1.0, 2.0, 4.0};
    n.d = 500;
    n.seeds = seed_range(0, 10);
    n.t_max = 400.0;
    n.adaptive = true;
  } else if (name == "fig2b") {
    c.delta = 2.0;
    s.params.alphas = {0.5, 1.0, 2.0};
    s.params.edge_power = 1.5;
    n.d = 500;
    n.seeds = seed_range(0, 3);
    n.step = 0.05;
    n.t_max = 600.0;
  } else if (name == "fig4b") {
    c.lambda = 0.5;
    s.params.alphas = {std::exp(3.0), std::exp(4.0), std::exp(5.0)};
    n.d = 400;
    n.seeds = seed_range(0, 3);
    n.cfl = 0.1;
  } else if (name == "fig4c") {
    s.params.alphas = {1e-2, 1e-3, 1e-4};
    n.d = 400;
    n.seeds = seed_range(0, 10);
    n.cfl = 0.1;
  } else if (name == "fig5b") {
    c.alpha = 10.0;
    n.d = 1000;
    n.seeds = seed_range(0, 20);
    n.t_max = 3.0;  // in rescaled time alpha^2 t
    n.cfl = 0.05;
  } else if (name == "fig_interp") {
    s.params.alphas = {4.0, 2.0, 1.0, 0.5, 0.25};
    s.params.amp_iters = 300;
    n.d = 2000;
  } else if (name == "dmft_vs_sim" || name == "fig_binary") {
    n.step = 0.05;
    n.t_max = 10.0;
    n.d = 400;
    n.seeds = seed_range(0, 10);
    if (name == "fig_binary") n.design = "binary";
  } else {
    std::string all;
    for (const auto& p : preset_names()) all += " " + p;
    throw ConfigError("unknown preset '" + name + "'; available:" + all);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Output helpers

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline json num_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

class ArtifactWriter {
 public:
  ArtifactWriter(const IoOptions& io, RunResult& res) : io_(io), res_(res) {
    std::error_code ec;
    std::filesystem::create_directories(io.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + io.out_dir + ": " + ec.message());
  }

  [[nodiscard]] std::string path(const std::string& name) const {
    return (std::filesystem::path(io_.out_dir) / name).string();
  }

  void table(const std::string& stem, const Table& t) {
    bool any = false;
    for (const auto& f : io_.formats) {
      if (f == "csv") {
        std::ofstream out(open(stem + ".csv"));
        for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
        out << '\n';
        for (const auto& r : t.rows) {
          for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << fmt_num(r[c]);
          out << '\n';
        }
        any = true;
      } else if (f == "json") {
        json j = json::object();
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
          json col = json::array();
          for (const auto& r : t.rows) col.push_back(num_json(r[c]));
          j[t.columns[c]] = col;
        }
        std::ofstream(open(stem + ".json")) << j.dump(2) << '\n';
        any = true;
      } else {
        throw ConfigError("unknown output format: " + f);
      }
    }
    if (!any) throw ConfigError("no output format selected");
  }

  void document(const std::string& name, const json& j) {
    std::ofstream(open(name)) << j.dump(2) << '\n';
  }

  void matrix(const std::string& name, const Mat& m) {
    const std::string p = open(name);
    write_csv_matrix(p, m);
  }

  void plot(const std::string& name, const std::vector<Series>& series, const PlotOptions& opt) {
    if (!io_.plot) return;
    write_svg(open(name), series, opt);
  }

  std::string open(const std::string& name) {
    const std::string p = path(name);
    res_.manifest.push_back(p);
    return p;
  }

 private:
  const IoOptions& io_;
  RunResult& res_;
};

inline Table curve_table(const CurveSet& c) {
  Table t{{"t", "e_train", "e_test"}, {}};
  for (std::size_t i = 0; i < c.t.size(); ++i) t.rows.push_back({c.t[i], c.e_train[i], c.e_test[i]});
  return t;
}

inline Table curve_se_table(const CurveSet& c) {
  Table t{{"t", "e_train_se", "e_test_se"}, {}};
  for (std::size_t i = 0; i < c.t.size(); ++i)
    t.rows.push_back({c.t[i], c.se_train[i], c.se_test[i]});
  return t;
}

// Reads a `t,e_train,e_test` CSV, or a run directory holding curves.csv (and
// curves_se.csv when present).
inline CurveSet read_curves(const std::string& where) {
  namespace fs = std::filesystem;
  fs::path p(where);
  fs::path se;
  if (fs::is_directory(p)) {
    se = p / "curves_se.csv";
    p = p / "curves.csv";
  }
  auto load = [](const fs::path& f) {
    std::ifstream in(f);
    if (!in) throw ConfigError("cannot read curve file " + f.string());
    std::string header;
    std::getline(in, header);
    if (header.rfind("t,", 0) != 0) throw ConfigError(f.string() + ": expected a t,... header");
    return read_csv_matrix(f.string(), true);
  };
  const Mat m = load(p);
  if (m.cols() < 3) throw ConfigError(p.string() + ": expected columns t,e_train,e_test");
  CurveSet c;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    c.t.push_back(m(i, 0));
    c.e_train.push_back(m(i, 1));
    c.e_test.push_back(m(i, 2));
  }
  c.se_train.assign(c.t.size(), 0.0);
  c.se_test.assign(c.t.size(), 0.0);
  if (!se.empty() && fs::exists(se)) {
    const Mat s = load(se);
    if (s.rows() == m.rows())
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        c.se_train[static_cast<std::size_t>(i)] = s(i, 1);
        c.se_test[static_cast<std::size_t>(i)] = s(i, 2);
      }
  }
  return c;
}

inline json fixed_point_json(const FixedPoint& fp) {
  const auto e = fixed_point_errors(fp);
  return {{"case", to_string(fp.kind)},
          {"C_w", fp.C_w},
          {"chi_or_Rw", fp.chi_or_Rw},
          {"C_f_or_tilde", fp.C_f_or_tilde},
          {"e_train", e.e_train},
          {"e_test", e.e_test},
          {"iterations", fp.iterations},
          {"residual", fp.residual},
          {"converged", fp.converged}};
}

inline json diff_json(const DiffReport& r) {
  json cols = json::object();
  for (const auto& c : r.columns)
    cols[c.column] = {{"max_diff", c.max_diff},   {"max_diff_t", c.max_diff_t},
                      {"band", c.band},           {"worst_excess", c.worst_excess},
                      {"worst_t", c.worst_t},     {"pass", c.pass}};
  return {{"pass", r.pass}, {"aligned_points", r.aligned}, {"columns", cols}};
}

// ---------------------------------------------------------------------------
// Dispatch

namespace detail {

inline Design design_of(const Numerics& n) {
  try {
    return parse_design(n.design);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline GfOptions gf_options(const Numerics& n) {
  GfOptions g;
  g.step = n.step;
  g.t_max = n.t_max;
  g.record_every = n.record_every > 0.0 ? n.record_every : n.step;
  if (n.integrator == "euler") g.integrator = Integrator::euler;
  else if (n.integrator == "heun") g.integrator = Integrator::heun;
  else throw ConfigError("unknown integrator: " + n.integrator);
  g.adaptive = n.adaptive;
  g.cfl = n.cfl;
  g.w_form = n.w_form;
  g.snapshot_every = n.snapshot_every;
  return g;
}

inline DatasetFactory dataset_factory(const ExperimentSpec& s) {
  if (s.data && !s.data->path.empty()) {
    IngestOptions io;
    io.normalize = s.data->normalize;
    io.header = s.data->header;
    io.n_sub = s.data->n_sub;
    io.d_sub = s.data->d_sub;
    io.seed = s.numerics.seeds.empty() ? 0 : s.numerics.seeds.front();
    auto design = std::make_shared<IngestedDesign>(ingest_design(s.data->path, io));
    const ModelConfig cfg = s.cfg;
    return [design, cfg](std::uint64_t seed) { return design->label(cfg, seed); };
  }
  const Design design = design_of(s.numerics);
  if (design == Design::external) throw ConfigError("design 'external' needs a data path");
  return synthetic_factory(s.cfg, s.numerics.d, design);
}

inline void note_sigma2(const ExperimentSpec& s, RunResult& r) {
  if (s.cfg.sigma2 == ModelConfig{}.sigma2)
    r.notes.push_back("sigma2 = 0.1 is a chosen default noise level");
}

inline std::vector<Series> curve_series(const CurveSet& c, const std::string& tag, bool dashed) {
  return {{tag + " e_train", c.t, c.e_train, dashed}, {tag + " e_test", c.t, c.e_test, dashed}};
}

inline void run_simulate(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto make = dataset_factory(s);
  const auto g = gf_options(s.numerics);
  const auto runs = simulate_runs(s.cfg, make, s.numerics.seeds, g, s.numerics.threads);
  const auto c = average_trajectories(runs);
  w.table("curves", curve_table(c));
  if (c.runs > 1) w.table("curves_se", curve_se_table(c));
  if (!runs.front().snapshots.empty()) {
    Table snap{{"t", "index", "w"}, {}};
    for (const auto& [t, v] : runs.front().snapshots)
      for (Eigen::Index i = 0; i < v.size(); ++i)
        snap.rows.push_back({t, static_cast<double>(i), v(i)});
    w.table("snapshots", snap);
  }
  w.plot("curves.svg", curve_series(c, "sim", false), {"simulation", "t", "error", true});
  r.summary["e_train_final"] = c.e_train.back();
  r.summary["e_test_final"] = c.e_test.back();
  r.summary["runs"] = c.runs;
}

inline DmftOptions dmft_options(const Numerics& n) {
  DmftOptions o;
  o.M = n.M;
  o.damping = n.damping;
  o.tol = n.tol;
  o.max_outer = n.max_outer;
  o.seed = n.seeds.empty() ? 0 : n.seeds.front();
  o.threads = n.threads;
  return o;
}

inline DmftResult run_dmft_into(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w,
                                const std::string& stem) {
  const auto grid = TimeGrid::covering(s.numerics.t_max, s.numerics.step);
  auto res = solve_dmft(s.cfg, grid, dmft_options(s.numerics));
  const auto c = curves_from_kernels(res.kernels);
  w.table(stem, curve_table(c));
  const auto& dg = res.diagnostics;
  w.document(stem + "_diagnostics.json", {{"outer_iterations", dg.outer_iterations},
                                          {"residual_history", dg.residual_history},
                                          {"converged", dg.converged},
                                          {"max_jitter", dg.max_jitter},
                                          {"M", s.numerics.M},
                                          {"step", grid.step},
                                          {"n_steps", grid.n_steps}});
  r.summary["outer_iterations"] = dg.outer_iterations;
  r.summary["residual"] = dg.residual_history.empty() ? 0.0 : dg.residual_history.back();
  if (!dg.converged) {
    r.exit_code = 3;
    r.notes.push_back("DMFT outer iteration did not reach tol within max_outer");
  }
  return res;
}

inline void run_dmft_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto res = run_dmft_into(s, r, w, "curves");
  const auto c = curves_from_kernels(res.kernels);
  if (s.params.dump_kernels) {
    w.matrix("kernel_C_w.csv", res.kernels.C_w);
    w.matrix("kernel_C_f.csv", res.kernels.C_f);
    w.matrix("kernel_R_w.csv", res.kernels.R_w);
    w.matrix("kernel_R_f.csv", res.kernels.R_f);
  }
  w.plot("curves.svg", curve_series(c, "dmft", false), {"DMFT", "t", "error", true});
  r.summary["e_train_final"] = c.e_train.back();
  r.summary["e_test_final"] = c.e_test.back();
}

inline FixedPoint solve_with_case(const ExperimentSpec& s) {
  const FixedPointCase kind =
      s.params.fp_case.empty() ? infer_case(s.cfg) : parse_case(s.params.fp_case);
  FixedPointOptions o;
  o.damping = s.numerics.damping;
  switch (kind) {
    case FixedPointCase::regularized: return solve_case_regularized(s.cfg, o);
    case FixedPointCase::ridgeless: return solve_case_ridgeless(s.cfg);
    case FixedPointCase::interpolating: return solve_case_interpolating(s.cfg, o);
  }
  throw std::logic_error("unreachable");
}

inline void run_fixed_point_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto fp = solve_with_case(s);
  w.document("fixed_point.json", fixed_point_json(fp));
  if (s.params.law_samples > 0) {
    CounterRng rng(s.numerics.seeds.empty() ? 0 : s.numerics.seeds.front(), 0x1a3);
    Table law{{"w_star", "g", "w"}, {}};
    for (int i = 0; i < s.params.law_samples; ++i) {
      const double ws = s.cfg.target.sample(rng);
      const double g = rng.normal();
      law.rows.push_back({ws, g, fp.law(ws, g)});
    }
    w.table("law", law);
  }
  const auto e = fixed_point_errors(fp);
  r.summary["e_train"] = e.e_train;
  r.summary["e_test"] = e.e_test;
  if (!fp.converged) {
    r.exit_code = 3;
    r.notes.push_back("fixed-point iteration did not converge");
  }
}

inline FixedPointCase case_for_penalty(const Penalty& p) {
  switch (p.kind) {
    case Penalty::Kind::l1: return FixedPointCase::regularized;
    case Penalty::Kind::none: return FixedPointCase::ridgeless;
    case Penalty::Kind::sinh_link: return FixedPointCase::interpolating;
  }
  return FixedPointCase::regularized;
}

inline void run_amp_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  Penalty pen;
  try {
    pen = parse_penalty(s.params.penalty, s.cfg.alpha);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (pen.kind == Penalty::Kind::l1 && !(s.cfg.lambda > 0.0))
    throw ConfigError("the l1 penalty needs lambda > 0");
  const GaussHermite gh(61);
  const auto make = dataset_factory(s);
  const Dataset ds = make(s.numerics.seeds.empty() ? 0 : s.numerics.seeds.front());
  ModelConfig cfg = s.cfg;
  cfg.delta = ds.delta();

  const bool sequence = pen.kind == Penalty::Kind::sinh_link && s.cfg.lambda == 0.0;
  const double lam = sequence ? s.params.lambdas.back() : s.cfg.lambda;
  AmpOptions ao;
  ao.iters = s.params.amp_iters;
  const auto run = run_amp(ds, pen, lam, ao);
  const auto se = run_state_evolution(cfg, pen, lam, s.params.amp_iters, gh);
  Table t{{"k", "mse_empirical", "mse_se", "b_k", "t_k"}, {}};
  for (const auto& it : run.trace) {
    const double mse_se = it.k == 0 ? cfg.rho2() : se[static_cast<std::size_t>(it.k - 1)].mse;
    t.rows.push_back({static_cast<double>(it.k), it.mse, mse_se, it.b_k, it.t_k});
  }
  w.table("amp", t);
  const auto sefp = se_fixed_point(cfg, pen, lam, gh);
  FixedPoint fp = map_se_to_dmft(sefp, case_for_penalty(pen), cfg);
  json doc = fixed_point_json(fp);
  doc["lambda"] = lam;
  doc["mse_empirical_final"] = run.trace.back().mse;
  if (sequence) {
    std::vector<double> vals;
    Table lt{{"lambda", "e_test"}, {}};
    for (double l : s.params.lambdas) {
      const double v = run_amp(ds, pen, l, ao).trace.back().mse + cfg.sigma2;
      vals.push_back(v);
      lt.rows.push_back({l, v});
    }
    w.table("amp_lambda", lt);
    doc["e_test_extrapolated"] = lambda_extrapolate(s.params.lambdas, vals);
    r.summary["e_test_extrapolated"] = doc["e_test_extrapolated"].get<double>();
  }
  w.document("amp_fixed_point.json", doc);
  r.summary["mse_final"] = run.trace.back().mse;
  if (!sefp.converged) {
    r.exit_code = 3;
    r.notes.push_back("state-evolution fixed point did not converge");
  }
}

inline GfOptions rate_gf_options(const Numerics& n, double horizon) {
  GfOptions g = gf_options(n);
  g.t_max = std::ceil(horizon / g.record_every) * g.record_every;
  return g;
}

inline void run_rate_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const GaussHermite gh(61);
  const auto fp = solve_with_case(s);
  const auto rs = solve_rate(fp, s.cfg, gh);
  json doc = {{"alpha", s.cfg.alpha}, {"delta", s.cfg.delta}, {"u", rs.u_star},
              {"A", rs.A},            {"gamma", rs.gamma},    {"gamma_hat", nullptr},
              {"r2", nullptr},        {"window", nullptr}};
  if (s.params.fit) {
    const auto rc = empirical_rate(s.cfg, s.numerics.d, design_of(s.numerics), s.numerics.seeds,
                                   rate_gf_options(s.numerics, s.numerics.t_max),
                                   s.params.edge_power, s.params.noise_floor, s.numerics.threads);
    doc["gamma_hat"] = rc.gamma_fit;
    doc["r2"] = rc.r2;
    doc["window"] = {rc.t_lo, rc.t_hi};
    r.summary["gamma_hat"] = rc.gamma_fit;
  }
  w.document("rate.json", doc);
  r.summary["gamma"] = rs.gamma;
}

inline json collapse_json(const CollapseResult& c, double predicted) {
  json pts = json::array();
  for (const auto& p : c.points)
    pts.push_back({{"alpha", p.alpha}, {"log_scale", p.log_scale}, {"time", num_json(p.time)},
                   {"ratio", num_json(p.ratio)}});
  return {{"points", pts},
          {"slope", c.fit.slope},
          {"intercept", c.fit.intercept},
          {"predicted_slope", num_json(predicted)},
          {"ratio_spread", num_json(c.ratio_spread)}};
}

inline CollapseOptions collapse_options(const ExperimentSpec& s) {
  CollapseOptions o;
  o.d = s.numerics.d;
  o.design = design_of(s.numerics);
  o.seeds = s.numerics.seeds;
  o.cfl = s.numerics.cfl;
  o.threads = s.numerics.threads;
  return o;
}

inline void run_collapse(const ExperimentSpec& s, CollapseKind kind, RunResult& r,
                         ArtifactWriter& w) {
  if (s.params.alphas.empty()) throw ConfigError("timescale needs --alphas");
  const auto c = measure_collapse(kind, s.cfg, s.params.alphas, collapse_options(s));
  Table t{{"alpha", "log_scale", "t_measured", "t_theory", "ratio"}, {}};
  std::vector<Series> series;
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    const auto& p = c.points[i];
    double theory = std::nan("");
    if (kind == CollapseKind::grokking) theory = grokking_time(p.alpha, s.cfg.lambda);
    else if (s.params.Delta > 0.0) theory = descent_time(p.alpha, s.params.Delta);
    t.rows.push_back({p.alpha, p.log_scale, p.time, theory, p.ratio});
    const auto& cs = c.curves[i];
    std::vector<double> x;
    for (double tt : cs.t) x.push_back(tt / p.log_scale);
    series.push_back({"alpha=" + fmt_num(p.alpha), x,
                      kind == CollapseKind::grokking ? cs.e_test : cs.e_train, false});
  }
  w.table("timescales", t);
  const double predicted = kind == CollapseKind::grokking ? 2.0 / s.cfg.lambda : std::nan("");
  w.document("collapse.json", collapse_json(c, predicted));
  w.plot("collapse.svg", series,
         {kind == CollapseKind::grokking ? "grokking collapse" : "descent collapse",
          kind == CollapseKind::grokking ? "t / ln(alpha)" : "t / ln(1/alpha)",
          kind == CollapseKind::grokking ? "e_test" : "e_train", false});
  r.summary["slope"] = c.fit.slope;
  r.summary["ratio_spread"] = c.ratio_spread;
}

inline void run_timescale_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto& kind = s.params.timescale;
  if (kind == "grokking") return run_collapse(s, CollapseKind::grokking, r, w);
  if (kind == "descent") return run_collapse(s, CollapseKind::descent, r, w);
  if (kind == "search") {
    const double step = s.numerics.record_every > 0.0 ? s.numerics.record_every : s.numerics.step;
    Table t{{"t", "W"}, {}};
    const auto n = static_cast<long>(std::llround(s.numerics.t_max / step));
    for (long i = 0; i <= n; ++i) {
      const double tt = static_cast<double>(i) * step;
      t.rows.push_back({tt, search_path(s.params.w_eff, s.cfg.lambda, tt)});
    }
    w.table("search", t);
    r.summary["Delta"] = std::abs(s.params.w_eff) - s.cfg.lambda;
    return;
  }
  throw ConfigError("unknown timescale kind: " + kind + " (grokking, descent, search)");
}

// For a simulate run directory, the exact training-error limit of the
// datasets it used (seed-averaged); the d -> infinity value is off by
// O(d^-1/2), enough to flip the sign of the late-time gap.
inline std::optional<double> run_train_limit(const std::string& where) {
  const auto run = std::filesystem::path(where) / "run.json";
  if (!std::filesystem::is_directory(where) || !std::filesystem::exists(run)) return std::nullopt;
  std::ifstream in(run);
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("spec")) return std::nullopt;
  const ExperimentSpec rs = spec_from_json(j.at("spec"));
  if (rs.command != Command::simulate) return std::nullopt;
  const auto make = dataset_factory(rs);
  double acc = 0.0;
  for (auto seed : rs.numerics.seeds) acc += finite_train_limit(make(seed));
  return acc / static_cast<double>(rs.numerics.seeds.size());
}

inline void run_fit_rate_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  if (s.params.input.empty()) throw ConfigError("fit-rate needs --input <curve csv>");
  const auto c = read_curves(s.params.input);
  const auto& y = s.params.column == "e_test" ? c.e_test : c.e_train;
  if (s.params.column != "e_train" && s.params.column != "e_test")
    throw ConfigError("column must be e_train or e_test");
  double e_inf = 0.0;
  if (s.params.e_inf) e_inf = *s.params.e_inf;
  else if (s.params.column == "e_train") {
    const auto lim = run_train_limit(s.params.input);
    e_inf = lim ? *lim
                : (s.cfg.delta > 1.0 ? s.cfg.sigma2 * (s.cfg.delta - 1.0) / s.cfg.delta : 0.0);
  } else {
    throw ConfigError("fit-rate on e_test needs an explicit --e-inf");
  }
  auto [lo, hi] = default_fit_window(c.t, y, e_inf, s.params.noise_floor);
  if (s.params.t_lo) lo = *s.params.t_lo;
  if (s.params.t_hi) hi = *s.params.t_hi;
  const auto f = fit_rate(c.t, y, e_inf, lo, hi, s.params.edge_power);
  w.document("fit.json", {{"gamma_hat", f.gamma_hat},
                          {"slope", f.slope},
                          {"intercept", f.intercept},
                          {"r2", f.r2},
                          {"points", f.points},
                          {"window", {f.t_lo, f.t_hi}},
                          {"e_inf", e_inf},
                          {"edge_power", s.params.edge_power}});
  r.summary["gamma_hat"] = f.gamma_hat;
  r.summary["r2"] = f.r2;
}

inline void run_compare_cmd(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  if (s.params.input.empty() || s.params.input_b.empty())
    throw ConfigError("compare needs --input and --input-b");
  const auto a = read_curves(s.params.input);
  const auto b = read_curves(s.params.input_b);
  ToleranceSpec tol;
  tol.rel_peak = s.params.rel_tol;
  tol.se_mult = s.params.se_mult;
  DiffReport rep;
  try {
    rep = compare_runs(a, b, tol);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  w.document("compare.json", diff_json(rep));
  r.summary["pass"] = rep.pass ? 1.0 : 0.0;
  if (!rep.pass) r.exit_code = 1;
}

// ---- presets

inline void preset_fig2a(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const GaussHermite gh(61);
  Table t{{"alpha", "e_test_mean", "e_test_std", "e_test_theory", "e_train_mean"}, {}};
  std::vector<double> xa, ym, yt;
  for (double alpha : s.params.alphas) {
    ModelConfig cfg = s.cfg;
    cfg.alpha = alpha;
    const auto fp = solve_fixed_point(cfg);
    double horizon = s.numerics.t_max;
    if (fp.kind != FixedPointCase::regularized && cfg.delta != 1.0)
      horizon = std::min(horizon, 10.0 / solve_rate(fp, cfg, gh).gamma);
    GfOptions g = rate_gf_options(s.numerics, horizon);
    g.record_every = g.t_max;
    const auto runs = simulate_runs(cfg, synthetic_factory(cfg, s.numerics.d, design_of(s.numerics)),
                                    s.numerics.seeds, g, s.numerics.threads);
    const auto c = average_trajectories(runs);
    const double sd = c.se_test.back() * std::sqrt(static_cast<double>(c.runs));
    const double th = fixed_point_errors(fp).e_test;
    t.rows.push_back({alpha, c.e_test.back(), sd, th, c.e_train.back()});
    xa.push_back(alpha);
    ym.push_back(c.e_test.back());
    yt.push_back(th);
  }
  w.table("fig2a", t);
  w.plot("fig2a.svg", {{"simulation", xa, ym, false}, {"theory", xa, yt, true}},
         {"final test error", "alpha", "e_test", false});
}

inline void preset_fig2b(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const GaussHermite gh(61);
  Table t{{"alpha", "delta", "gamma_theory", "gamma_fit", "r2"}, {}};
  for (double alpha : s.params.alphas) {
    ModelConfig cfg = s.cfg;
    cfg.alpha = alpha;
    const double gamma = solve_rate(solve_fixed_point(cfg), cfg, gh).gamma;
    const auto g = rate_gf_options(s.numerics, std::min(s.numerics.t_max, 12.0 / gamma));
    const auto rc = empirical_rate(cfg, s.numerics.d, design_of(s.numerics), s.numerics.seeds, g,
                                   s.params.edge_power, s.params.noise_floor, s.numerics.threads);
    t.rows.push_back({alpha, cfg.delta, rc.gamma_theory, rc.gamma_fit, rc.r2});
  }
  w.table("rates", t);
  (void)r;
}

inline void preset_fig5b(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto lc = lazy_comparison(s.cfg, s.numerics.d, design_of(s.numerics), s.numerics.seeds,
                                  s.numerics.t_max, 30, s.numerics.cfl, s.numerics.threads);
  Table t{{"t_bar", "e_train_sim", "e_test_sim", "e_train_lazy", "e_test_lazy"}, {}};
  for (std::size_t i = 0; i < lc.t_bar.size(); ++i)
    t.rows.push_back({lc.t_bar[i], lc.sim.e_train[i], lc.sim.e_test[i], lc.theory.e_train[i],
                      lc.theory.e_test[i]});
  w.table("lazy", t);
  w.plot("lazy.svg",
         {{"sim e_train", lc.t_bar, lc.sim.e_train, false},
          {"sim e_test", lc.t_bar, lc.sim.e_test, false},
          {"MP e_train", lc.t_bar, lc.theory.e_train, true},
          {"MP e_test", lc.t_bar, lc.theory.e_test, true}},
         {"lazy phase", "alpha^2 t", "error", false});
  r.summary["max_rel_train"] = lc.max_rel_train;
  r.summary["max_rel_test"] = lc.max_rel_test;
}

inline void preset_interp(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  Table t{{"alpha", "e_test_theory", "e_test_amp", "rel_diff"}, {}};
  double worst = 0.0;
  for (double alpha : s.params.alphas) {
    ModelConfig cfg = s.cfg;
    cfg.alpha = alpha;
    const auto ic = interp_amp(cfg, s.numerics.d, design_of(s.numerics),
                               s.numerics.seeds.empty() ? 0 : s.numerics.seeds.front(),
                               s.params.lambdas, s.params.amp_iters);
    const double rel = std::abs(ic.e_test_amp / ic.e_test_theory - 1.0);
    worst = std::max(worst, rel);
    t.rows.push_back({alpha, ic.e_test_theory, ic.e_test_amp, rel});
  }
  w.table("interp", t);
  r.summary["max_rel_diff"] = worst;
}

inline void preset_dmft_vs_sim(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto dres = run_dmft_into(s, r, w, "curves_dmft");
  const auto dc = curves_from_kernels(dres.kernels);
  GfOptions g = gf_options(s.numerics);
  const auto sc = simulate_curves(s.cfg, s.numerics.d, design_of(s.numerics), s.numerics.seeds, g,
                                  s.numerics.threads);
  w.table("curves_sim", curve_table(sc));
  w.table("curves_sim_se", curve_se_table(sc));
  ToleranceSpec tol;
  tol.rel_peak = s.params.rel_tol;
  tol.se_mult = s.params.se_mult;
  const auto rep = compare_runs(dc, sc, tol);
  w.document("compare.json", diff_json(rep));
  auto series = curve_series(sc, "sim", false);
  for (auto& x : curve_series(dc, "dmft", true)) series.push_back(x);
  w.plot("overlay.svg", series, {"DMFT vs simulation", "t", "error", false});
  r.summary["pass"] = rep.pass ? 1.0 : 0.0;
}

inline void run_preset(const ExperimentSpec& s, RunResult& r, ArtifactWriter& w) {
  const auto& name = s.params.preset;
  if (name == "fig2a") return preset_fig2a(s, r, w);
  if (name == "fig2b") return preset_fig2b(s, r, w);
  if (name == "fig4b") return run_collapse(s, CollapseKind::grokking, r, w);
  if (name == "fig4c") return run_collapse(s, CollapseKind::descent, r, w);
  if (name == "fig5b") return preset_fig5b(s, r, w);
  if (name == "fig_interp") return preset_interp(s, r, w);
  if (name == "dmft_vs_sim" || name == "fig_binary") return preset_dmft_vs_sim(s, r, w);
  (void)preset_spec(name);  // throws the list of presets
}

}  // namespace detail

inline json result_json(const RunResult& r) {
  json summary = json::object();
  for (const auto& [k, v] : r.summary) summary[k] = num_json(v);
  return {{"spec", to_json(r.spec)},   {"manifest", r.manifest}, {"wall_time", r.wall_time},
          {"summary", summary},        {"notes", r.notes},       {"exit_code", r.exit_code}};
}

inline void validate_spec(const ExperimentSpec& s) {
  try {
    s.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& n = s.numerics;
  if (n.d < 1) throw ConfigError("dimension d must be >= 1");
  if (n.M < 1) throw ConfigError("path count M must be >= 1");
  if (!(n.step > 0.0) || !(n.t_max > 0.0)) throw ConfigError("step and t_max must be > 0");
  if (n.record_every < 0.0) throw ConfigError("record_every must be >= 0");
  if (!(n.damping > 0.0 && n.damping <= 1.0)) throw ConfigError("damping must lie in (0, 1]");
  if (!(n.tol > 0.0)) throw ConfigError("tol must be > 0");
  if (n.seeds.empty()) throw ConfigError("at least one seed is required");
  if (s.io.formats.empty()) throw ConfigError("at least one output format is required");
  if (s.data && s.data->path.empty()) throw ConfigError("data section needs a path");
}

// Runs one experiment, writing artifacts and run.json into spec.io.out_dir.
// Configuration problems surface as ConfigError, divergence as DivergenceError;
// non-convergence is reported through exit_code 3 with artifacts kept.
inline RunResult run_experiment(const ExperimentSpec& spec) {
  validate_spec(spec);
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.spec = spec;
  ArtifactWriter w(spec.io, r);
  detail::note_sigma2(spec, r);
  try {
    switch (spec.command) {
      case Command::simulate: detail::run_simulate(spec, r, w); break;
      case Command::dmft: detail::run_dmft_cmd(spec, r, w); break;
      case Command::fixed_point: detail::run_fixed_point_cmd(spec, r, w); break;
      case Command::amp: detail::run_amp_cmd(spec, r, w); break;
      case Command::rate: detail::run_rate_cmd(spec, r, w); break;
      case Command::timescale: detail::run_timescale_cmd(spec, r, w); break;
      case Command::fit_rate: detail::run_fit_rate_cmd(spec, r, w); break;
      case Command::preset: detail::run_preset(spec, r, w); break;
      case Command::compare: detail::run_compare_cmd(spec, r, w); break;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::domain_error& e) {
    throw ConfigError(e.what());
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(w.path("run.json")) << result_json(r).dump(2) << '\n';
  return r;
}

}  // namespace dlnflow
