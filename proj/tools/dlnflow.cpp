// dlnflow command-line harness.
//
//   dlnflow [global flags] <simulate|dmft|fixed-point|amp|rate|timescale|fit-rate|preset|compare>
//
// Precedence: built-in defaults < preset < --config file < explicit flags.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlnflow/experiment.hpp"

using namespace dlnflow;

namespace {

template <class T>
void set_if(const std::optional<T>& v, T& out) {
  if (v) out = *v;
}

// bernoulli:P[:VALUE] | gaussian:VAR | discrete:V:P,V:P,...
TargetDist parse_target(const std::string& s) {
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : s.substr(colon + 1);
  auto num = [&](const std::string& x) {
    try {
      std::size_t used = 0;
      const double v = std::stod(x, &used);
      if (used != x.size()) throw std::invalid_argument(x);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad number in --target: '" + x + "'");
    }
  };
  try {
    if (kind == "gaussian") return TargetDist::gaussian(rest.empty() ? 1.0 : num(rest));
    if (kind == "bernoulli") {
      const auto c = rest.find(':');
      if (c == std::string::npos) return TargetDist::bernoulli(num(rest));
      return TargetDist::bernoulli(num(rest.substr(0, c)), num(rest.substr(c + 1)));
    }
    if (kind == "discrete") {
      std::vector<Atom> atoms;
      std::stringstream ss(rest);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto c = item.find(':');
        if (c == std::string::npos) throw ConfigError("discrete atoms are VALUE:PROB pairs");
        atoms.push_back({num(item.substr(0, c)), num(item.substr(c + 1))});
      }
      return TargetDist::discrete(atoms);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("unknown --target '" + s + "' (bernoulli:P[:V], gaussian:VAR, discrete:V:P,...)");
}

struct Overrides {
  // global
  std::optional<std::string> config, out, format, target;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  bool plot = false;
  // model
  std::optional<double> delta, alpha, lambda, sigma2, truncation;
  std::optional<int> layers;
  // numerics
  std::optional<double> step, t_max, record_every, tol, damping, cfl, snapshot_every;
  std::optional<Eigen::Index> M, d;
  std::optional<int> max_outer;
  std::optional<std::string> design, integrator;
  std::optional<bool> adaptive, w_form;
  std::optional<unsigned> threads;
  // data
  std::optional<std::string> data;
  std::optional<bool> normalize, header;
  std::optional<Eigen::Index> n_sub, d_sub;
  // command params
  std::optional<std::string> fp_case, penalty, timescale, input, input_b, column, preset;
  std::optional<int> amp_iters, law_samples;
  std::optional<std::vector<double>> lambdas, alphas;
  std::optional<double> Delta, w_eff, e_inf, t_lo, t_hi, edge_power, floor, rel_tol, se_mult;
  bool fit = false, dump_kernels = false;
};

void apply(const Overrides& o, ExperimentSpec& s) {
  if (o.out) s.io.out_dir = *o.out;
  if (o.format) {
    s.io.formats.clear();
    std::stringstream ss(*o.format);
    std::string f;
    while (std::getline(ss, f, ',')) s.io.formats.push_back(f);
  }
  if (o.plot) s.io.plot = true;
  if (o.seed || o.seeds) {
    const std::uint64_t first = o.seed ? *o.seed : (s.numerics.seeds.empty() ? 0 : s.numerics.seeds.front());
    const int count = o.seeds ? *o.seeds : static_cast<int>(std::max<std::size_t>(1, s.numerics.seeds.size()));
    if (count < 1) throw ConfigError("--seeds must be >= 1");
    s.numerics.seeds = seed_range(first, count);
  }
  auto& c = s.cfg;
  set_if(o.delta, c.delta);
  set_if(o.alpha, c.alpha);
  set_if(o.lambda, c.lambda);
  set_if(o.sigma2, c.sigma2);
  set_if(o.layers, c.layers);
  if (o.truncation) c.truncation = *o.truncation;
  if (o.target) c.target = parse_target(*o.target);
  auto& n = s.numerics;
  set_if(o.step, n.step);
  set_if(o.t_max, n.t_max);
  set_if(o.record_every, n.record_every);
  set_if(o.tol, n.tol);
  set_if(o.damping, n.damping);
  set_if(o.cfl, n.cfl);
  set_if(o.snapshot_every, n.snapshot_every);
  set_if(o.M, n.M);
  set_if(o.d, n.d);
  set_if(o.max_outer, n.max_outer);
  set_if(o.design, n.design);
  set_if(o.integrator, n.integrator);
  set_if(o.adaptive, n.adaptive);
  set_if(o.w_form, n.w_form);
  set_if(o.threads, n.threads);
  if (o.data || o.normalize || o.header || o.n_sub || o.d_sub) {
    DataSource ds = s.data.value_or(DataSource{});
    set_if(o.data, ds.path);
    set_if(o.normalize, ds.normalize);
    set_if(o.header, ds.header);
    set_if(o.n_sub, ds.n_sub);
    set_if(o.d_sub, ds.d_sub);
    s.data = ds;
  }
  auto& p = s.params;
  set_if(o.fp_case, p.fp_case);
  set_if(o.penalty, p.penalty);
  set_if(o.timescale, p.timescale);
  set_if(o.input, p.input);
  set_if(o.input_b, p.input_b);
  set_if(o.column, p.column);
  set_if(o.amp_iters, p.amp_iters);
  set_if(o.law_samples, p.law_samples);
  set_if(o.lambdas, p.lambdas);
  set_if(o.alphas, p.alphas);
  set_if(o.Delta, p.Delta);
  set_if(o.w_eff, p.w_eff);
  set_if(o.edge_power, p.edge_power);
  set_if(o.floor, p.noise_floor);
  set_if(o.rel_tol, p.rel_tol);
  set_if(o.se_mult, p.se_mult);
  if (o.e_inf) p.e_inf = o.e_inf;
  if (o.t_lo) p.t_lo = o.t_lo;
  if (o.t_hi) p.t_hi = o.t_hi;
  if (o.fit) p.fit = true;
  if (o.dump_kernels) p.dump_kernels = true;
}

void print_result(const RunResult& r) {
  for (const auto& note : r.notes) std::cout << "note: " << note << '\n';
  for (const auto& [k, v] : r.summary) std::cout << k << " = " << fmt_num(v) << '\n';
  std::cout << "wrote " << r.manifest.size() << " files to " << r.spec.io.out_dir << " in "
            << r.wall_time << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow dynamics of diagonal linear networks: simulation, DMFT, fixed points, AMP and rates"};
  app.fallthrough();
  app.require_subcommand(1);
  Overrides o;

  app.add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "output directory");
  app.add_option("--seed", o.seed, "first seed");
  app.add_option("--seeds", o.seeds, "number of consecutive seeds");
  app.add_flag("--plot", o.plot, "also write SVG plots");
  app.add_option("--format", o.format, "table formats: csv, json or csv,json");

  auto* model = "Model";
  app.add_option("--delta", o.delta, "samples per dimension n/d")->group(model);
  app.add_option("--alpha", o.alpha, "initialization scale")->group(model);
  app.add_option("--lambda", o.lambda, "weight decay")->group(model);
  app.add_option("--sigma2", o.sigma2, "label noise variance")->group(model);
  app.add_option("--layers", o.layers, "depth L >= 2")->group(model);
  app.add_option("--truncation", o.truncation, "truncation level M of the smooth cap")->group(model);
  app.add_option("--target", o.target, "bernoulli:P[:V] | gaussian:VAR | discrete:V:P,...")->group(model);

  auto* num = "Numerics";
  app.add_option("--step", o.step, "time step")->group(num);
  app.add_option("--t-max", o.t_max, "time horizon")->group(num);
  app.add_option("--record-every", o.record_every, "recording interval (0: every step)")->group(num);
  app.add_option("--M", o.M, "DMFT path count")->group(num);
  app.add_option("--d", o.d, "dimension")->group(num);
  app.add_option("--tol", o.tol, "DMFT outer tolerance")->group(num);
  app.add_option("--damping", o.damping, "damping for outer and fixed-point iterations")->group(num);
  app.add_option("--max-outer", o.max_outer, "DMFT outer iteration cap")->group(num);
  app.add_option("--design", o.design, "gaussian | binary")->group(num);
  app.add_option("--integrator", o.integrator, "euler | heun")->group(num);
  app.add_option("--adaptive", o.adaptive, "adaptive step (true/false)")->group(num);
  app.add_option("--cfl", o.cfl, "adaptive step safety factor")->group(num);
  app.add_option("--w-form", o.w_form, "integrate the reduced w equation (true/false)")->group(num);
  app.add_option("--snapshot-every", o.snapshot_every, "weight snapshot interval")->group(num);
  app.add_option("--threads", o.threads, "worker threads (0: hardware)")->group(num);

  auto* dat = "Data";
  app.add_option("--data", o.data, "CSV design matrix, one sample per row")->group(dat);
  app.add_option("--normalize", o.normalize, "rescale columns (true/false)")->group(dat);
  app.add_option("--header", o.header, "CSV has a header row (true/false)")->group(dat);
  app.add_option("--n-sub", o.n_sub, "subsample rows")->group(dat);
  app.add_option("--d-sub", o.d_sub, "subsample columns")->group(dat);

  auto* sim = app.add_subcommand("simulate", "finite-d gradient flow, seed-averaged curves");
  auto* dm = app.add_subcommand("dmft", "Monte Carlo DMFT solver");
  dm->add_flag("--dump-kernels", o.dump_kernels, "write C_w, C_f, R_w, R_f matrices");
  auto* fp = app.add_subcommand("fixed-point", "long-time fixed point");
  fp->add_option("--case", o.fp_case, "regularized | ridgeless | interpolating");
  fp->add_option("--law-samples", o.law_samples, "draw samples of the limiting law");
  auto* amp = app.add_subcommand("amp", "AMP run with state evolution");
  amp->add_option("--penalty", o.penalty, "l1 | none | sinh");
  amp->add_option("--iters", o.amp_iters, "AMP iterations");
  amp->add_option("--lambdas", o.lambdas, "lambda sequence for extrapolation")->delimiter(',');
  auto* rate = app.add_subcommand("rate", "convergence rate from the rate system");
  rate->add_option("--case", o.fp_case, "fixed-point case");
  rate->add_flag("--fit", o.fit, "also fit the rate on simulated curves");
  rate->add_option("--edge-power", o.edge_power, "power-law correction p in ln|gap| + p ln t");
  rate->add_option("--floor", o.floor, "noise floor for the fit window");
  auto* ts = app.add_subcommand("timescale", "grokking / descent collapse or search path");
  ts->add_option("--kind", o.timescale, "grokking | descent | search");
  ts->add_option("--alphas", o.alphas, "initialization scales")->delimiter(',');
  ts->add_option("--Delta", o.Delta, "active gap for the descent time");
  ts->add_option("--w-eff", o.w_eff, "effective signal for the search path");
  auto* fr = app.add_subcommand("fit-rate", "fit an exponential rate to a curve file");
  fr->add_option("input", o.input, "curve CSV or run directory")->required();
  fr->add_option("--column", o.column, "e_train | e_test");
  fr->add_option("--e-inf", o.e_inf, "limit value (default from theory)");
  fr->add_option("--t-lo", o.t_lo, "window start");
  fr->add_option("--t-hi", o.t_hi, "window end");
  fr->add_option("--edge-power", o.edge_power, "power-law correction p");
  fr->add_option("--floor", o.floor, "noise floor for the default window");
  auto* pre = app.add_subcommand("preset", "figure-scale experiment");
  pre->add_option("name", o.preset, "preset name")->required();
  pre->add_option("--alphas", o.alphas, "initialization scales")->delimiter(',');
  pre->add_option("--lambdas", o.lambdas, "lambda sequence for extrapolation")->delimiter(',');
  pre->add_option("--edge-power", o.edge_power, "power-law correction p");
  pre->add_option("--rel-tol", o.rel_tol, "relative band for comparisons");
  auto* cmp = app.add_subcommand("compare", "compare two curve files or run directories");
  cmp->add_option("a", o.input, "first run")->required();
  cmp->add_option("b", o.input_b, "second run")->required();
  cmp->add_option("--rel-tol", o.rel_tol, "band as a fraction of the peak");
  cmp->add_option("--se-mult", o.se_mult, "standard-error multiplier");
  auto* ls = app.add_subcommand("list-presets", "print preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (ls->parsed()) {
    for (const auto& p : preset_names()) std::cout << p << '\n';
    return 0;
  }

  const std::vector<std::pair<CLI::App*, Command>> cmds{
      {sim, Command::simulate},   {dm, Command::dmft},        {fp, Command::fixed_point},
      {amp, Command::amp},        {rate, Command::rate},      {ts, Command::timescale},
      {fr, Command::fit_rate},    {pre, Command::preset},     {cmp, Command::compare}};
  Command cmd = Command::simulate;
  for (const auto& [sub, c] : cmds)
    if (sub->parsed()) cmd = c;

  try {
    ExperimentSpec spec = cmd == Command::preset ? preset_spec(*o.preset) : default_spec(cmd);
    if (o.config) spec = load_spec(*o.config, spec);
    spec.command = cmd;
    if (cmd == Command::preset) spec.params.preset = *o.preset;
    apply(o, spec);
    const RunResult r = run_experiment(spec);
    print_result(r);
    return r.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 4;
  } catch (const FitError& e) {
    std::cerr << "fit failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
