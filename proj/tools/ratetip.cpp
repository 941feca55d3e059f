// ratetip: command-line driver for the rate-induced tipping toolkit.
//
// Every subcommand reads one JSON config (all keys optional, unknown keys
// rejected), applies command-line overrides, validates everything before
// touching the output directory, then writes <command>_<hash>.csv (or .json)
// and manifest.json.  Exit codes: 1 I/O, 2 numerical failure, 3 config.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ratetip/ratetip.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace ratetip;

namespace {

constexpr const char* kVersion = "ratetip 1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// logging

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };
Level g_level = Level::warn;

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= g_level) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

Level level_from_env() {
  const char* v = std::getenv("RATETIP_LOG");
  if (!v || !*v) return Level::warn;
  const std::string s(v);
  if (s == "error") return Level::error;
  if (s == "warn") return Level::warn;
  if (s == "info") return Level::info;
  if (s == "debug") return Level::debug;
  throw ConfigError("RATETIP_LOG must be one of error, warn, info, debug (got '" + s + "')");
}

// ---------------------------------------------------------------------------
// configuration

json default_config() {
  return json::parse(R"({
    "model": {"epsilon": 1.25, "lambda_max": 3.0, "D": 0.008, "t0": -10.0, "x0": -1.0, "xT": 4.0,
              "x_start": -6.0, "x_end": 2.0, "dt": 0.01},
    "grid": {"n_cells": 3200, "substeps": 20},
    "fpe": {"t_final": 10.0, "density_stride": 100},
    "indicators": {"t_begin": -10.0, "t_end": 10.0},
    "ensemble": {"n_paths": 100000, "dt_sim": 0.001, "seed": 0, "initial": "point", "threshold_y": null},
    "critical_rate": {"tol": 1e-4, "bracket": [1.0, 1.6]},
    "path": {"n_intervals": 200, "T_end_start": -9.0, "T_end_target": 20.0, "threshold_y": 1.5,
             "stop_at_first_root": false},
    "sweep": {"epsilon_min": 1.05, "epsilon_max": 1.25, "epsilon_count": 11,
              "D_min": 0.001, "D_max": 0.1, "D_count": 40},
    "threshold_sweep": {"y_values": [1.3, 1.5, 1.8]},
    "domain_sweep": {"x_end_values": [0.5, 1.0, 2.0]},
    "output": {"format": "csv"}
  })");
}

/// Overlays `user` on `base`, rejecting keys the defaults do not know.
void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), path);
    } else if (slot.is_null() || it.value().is_null()) {
      slot = it.value();
    } else if (slot.is_number() != it.value().is_number() || slot.is_string() != it.value().is_string() ||
               slot.is_array() != it.value().is_array() || slot.is_boolean() != it.value().is_boolean()) {
      throw ConfigError("config key '" + path + "' has the wrong type");
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

ModelParams model_from(const json& c) {
  ModelParams p;
  p.ramp.epsilon = get<double>(c, "model", "epsilon");
  p.ramp.lambda_max = get<double>(c, "model", "lambda_max");
  p.D = get<double>(c, "model", "D");
  p.t0 = get<double>(c, "model", "t0");
  p.x0 = get<double>(c, "model", "x0");
  p.xT = get<double>(c, "model", "xT");
  p.x_start = get<double>(c, "model", "x_start");
  p.x_end = get<double>(c, "model", "x_end");
  p.dt = get<double>(c, "model", "dt");
  return p;
}

FpeOptions fpe_from(const json& c) {
  FpeOptions o;
  o.n_cells = get<int>(c, "grid", "n_cells");
  o.substeps = get<int>(c, "grid", "substeps");
  return o;
}

/// Stable 64-bit FNV-1a of the text.
std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// outputs

struct Outputs {
  fs::path dir;
  std::string format = "csv";
  std::string stem;  // <command>_<hash>
  std::vector<std::pair<std::string, std::string>> files;  // name, content

  void add(const std::string& suffix, const io::Table& t) {
    const std::string name = stem + suffix + "." + format;
    if (format == "csv") {
      files.emplace_back(name, io::to_csv(t));
    } else {
      json j;
      j["meta"] = t.comment.empty() ? json::object() : json::parse(t.comment);
      j["columns"] = t.columns;
      j["rows"] = t.rows;
      files.emplace_back(name, j.dump(1) + "\n");
    }
  }
};

void write_all(const Outputs& out, const json& manifest) {
  std::error_code ec;
  fs::create_directories(out.dir, ec);
  if (ec) throw IoError("cannot create " + out.dir.string() + ": " + ec.message());
  for (const auto& [name, content] : out.files) io::write_file((out.dir / name).string(), content);
  io::write_file((out.dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

json fmt(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

// ---------------------------------------------------------------------------
// commands.  Each fills `out` and returns the manifest "results" block.

json cmd_critical_rate(const json& c, Outputs& out) {
  const double tol = get<double>(c, "critical_rate", "tol");
  const auto br = get<std::vector<double>>(c, "critical_rate", "bracket");
  if (br.size() != 2) throw ConfigError("critical_rate.bracket needs two values");
  const double lmax = get<double>(c, "model", "lambda_max");
  const auto r = find_critical_epsilon_traced(lmax, tol, br[0], br[1]);
  io::Table t;
  t.columns = {"epsilon", "tips"};
  for (const auto& [e, tip] : r.trace) t.add({e, tip ? 1.0 : 0.0});
  t.comment = json{{"epsilon_c", r.epsilon_c}, {"tol", tol}}.dump();
  out.add("", t);
  std::printf("epsilon_c = %.10f +- %.1e\n", r.epsilon_c, tol);
  for (const auto& [e, tip] : r.trace) std::printf("  %.10f %s\n", e, tip ? "tips" : "tracks");
  return {{"epsilon_c", r.epsilon_c}, {"tol", tol}, {"probes", r.trace.size()}};
}

json cmd_fpe(const json& c, Outputs& out) {
  const ModelParams p = model_from(c);
  const FpeOptions o = fpe_from(c);
  const double t_final = get<double>(c, "fpe", "t_final");
  const int stride = get<int>(c, "fpe", "density_stride");
  if (stride < 1) throw ConfigError("fpe.density_stride must be >= 1");
  const auto ev = evolve_from_stationary(p, t_final, o);
  io::Table t;
  t.columns = {"t", "mass", "p_esc", "rate"};
  std::size_t peak = 0;
  for (std::size_t n = 0; n < ev.escape.times.size(); ++n) {
    t.add({ev.escape.times[n], ev.densities[n + 1].mass, ev.escape.p_esc[n], ev.escape.rate[n]});
    if (ev.escape.rate[n] > ev.escape.rate[peak]) peak = n;
  }
  const double escaped = 1.0 - ev.densities.back().mass / ev.densities.front().mass;
  t.comment = json{{"epsilon", p.ramp.epsilon}, {"D", p.D}, {"escaped_fraction", escaped}}.dump();
  out.add("", t);
  io::Table d;
  d.columns = {"t", "x", "p"};
  for (std::size_t n = 0; n < ev.densities.size(); n += static_cast<std::size_t>(stride)) {
    const auto& f = ev.densities[n];
    for (int i = 0; i < f.grid.n_nodes(); ++i) d.add({f.t, f.grid.node(i), f.values[i]});
  }
  out.add("_density", d);
  return {{"escaped_fraction", escaped}, {"rate_peak_time", fmt(ev.escape.times[peak])}};
}

json cmd_threshold_sweep(const json& c, Outputs& out, unsigned jobs) {
  const ModelParams p = model_from(c);
  const auto ys = get<std::vector<double>>(c, "threshold_sweep", "y_values");
  const double t_final = get<double>(c, "fpe", "t_final");
  const auto sw = threshold_sweep(ys, p, t_final, fpe_from(c), jobs);
  io::Table t;
  t.columns = {"t", "y", "rate"};
  json peaks = json::array();
  for (std::size_t j = 0; j < ys.size(); ++j) {
    std::size_t best = 0;
    for (std::size_t n = 0; n < sw.times.size(); ++n) {
      t.add({sw.times[n], ys[j], sw.rate[n][j]});
      if (sw.rate[n][j] > sw.rate[best][j]) best = n;
    }
    peaks.push_back({{"y", ys[j]}, {"peak_time", sw.times.empty() ? json(nullptr) : json(sw.times[best])}});
  }
  out.add("", t);
  return {{"peaks", peaks}};
}

json onsets(const IndicatorSeries& s) {
  auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  return {{"autocorrelation", opt(autocorrelation_onset(s))},
          {"variance", opt(variance_onset(s))},
          {"decay_rate", opt(decay_rate_onset(s))}};
}

json cmd_indicators(const json& c, Outputs& out) {
  const ModelParams p = model_from(c);
  const double a = get<double>(c, "indicators", "t_begin"), b = get<double>(c, "indicators", "t_end");
  const auto s = lag1_series(p, {a, b}, fpe_from(c));
  io::Table t;
  t.columns = {"t", "autocorrelation", "variance", "decay_rate", "mean", "survival"};
  for (std::size_t n = 0; n < s.times.size(); ++n)
    t.add({s.times[n], s.autocorrelation[n], s.variance[n], s.decay_rate[n], s.mean[n], s.survival[n]});
  t.comment = json{{"epsilon", p.ramp.epsilon}, {"D", p.D}, {"dt", s.dt}}.dump();
  out.add("", t);
  return {{"onsets", onsets(s)}, {"truncated", s.truncated}};
}

json cmd_domain_sweep(const json& c, Outputs& out, unsigned jobs) {
  const ModelParams p = model_from(c);
  const auto xs = get<std::vector<double>>(c, "domain_sweep", "x_end_values");
  const double a = get<double>(c, "indicators", "t_begin"), b = get<double>(c, "indicators", "t_end");
  const auto all = domain_sweep(xs, p, {a, b}, fpe_from(c), jobs);
  io::Table t;
  t.columns = {"x_end", "t", "autocorrelation", "variance", "decay_rate"};
  json on = json::array();
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const auto& s = all[j];
    for (std::size_t n = 0; n < s.times.size(); ++n)
      t.add({xs[j], s.times[n], s.autocorrelation[n], s.variance[n], s.decay_rate[n]});
    on.push_back({{"x_end", xs[j]}, {"onsets", onsets(s)}});
  }
  out.add("", t);
  return {{"per_x_end", on}};
}

json cmd_mc(const json& c, Outputs& out, unsigned jobs, std::optional<std::uint64_t> seed) {
  const ModelParams p = model_from(c);
  EnsembleConfig e;
  e.n_paths = get<long>(c, "ensemble", "n_paths");
  e.dt_sim = get<double>(c, "ensemble", "dt_sim");
  e.seed = seed ? *seed : get<std::uint64_t>(c, "ensemble", "seed");
  const auto init = get<std::string>(c, "ensemble", "initial");
  if (init == "point")
    e.initial = InitialCondition::point(p.x0);
  else if (init == "stationary")
    e.initial = InitialCondition::stationary(lambda_at(p.t0, p));
  else
    throw ConfigError("ensemble.initial must be 'point' or 'stationary'");
  if (!c.at("ensemble").at("threshold_y").is_null()) e.threshold_y = get<double>(c, "ensemble", "threshold_y");
  e.jobs = jobs;
  const double t_final = get<double>(c, "fpe", "t_final");
  const auto r = run_ensemble(e, p, {p.t0, t_final});
  io::Table t;
  t.columns = {"t", "mean", "variance", "autocorrelation", "survivors"};
  for (std::size_t n = 0; n < r.times.size(); ++n)
    t.add({r.times[n], r.mean[n], r.variance[n], r.autocorrelation[n], static_cast<double>(r.survivors[n])});
  t.comment = json{{"epsilon", p.ramp.epsilon}, {"D", p.D}, {"n_paths", r.n_paths}, {"seed", r.seed},
                   {"escape_fraction", r.escape_fraction}}.dump();
  out.add("", t);
  io::Table esc;
  esc.columns = {"escape_time"};
  for (double v : r.escape_times) esc.add({v});
  out.add("_escapes", esc);
  return {{"escape_fraction", r.escape_fraction}, {"escape_fraction_se", r.escape_fraction_se()},
          {"n_paths", r.n_paths}, {"seed", r.seed}};
}

SeedingOptions seeding_from(const json& c) {
  SeedingOptions so;
  so.n_intervals = get<int>(c, "path", "n_intervals");
  so.T_end_start = get<double>(c, "path", "T_end_start");
  so.T_end_target = get<double>(c, "path", "T_end_target");
  so.stop_at_first_root = get<bool>(c, "path", "stop_at_first_root");
  return so;
}

json cmd_path(const json& c, Outputs& out) {
  const ModelParams p = model_from(c);
  p.validate();
  check_validated_range(p);
  ModelParams ref = p;
  ref.ramp.epsilon = 1.25;
  ref.D = 0.05;
  const SeedingOptions so = seeding_from(c);
  const auto runs = run_seeding_steps(ref, so);
  if (runs.step3.roots.empty()) throw NoCrossing("path: m has no sign change along the T_end family");
  io::Table fam;
  fam.columns = {"T_end", "M", "m"};
  for (const auto& q : runs.step3.monitor) fam.add({q.T_end, q.M, q.m});
  fam.comment = json{{"epsilon", ref.ramp.epsilon}, {"D", ref.D}, {"m_sign_changes", runs.step3.brackets.size()}}.dump();
  out.add("_family", fam);
  const PathSolution opt0 = optimal_path_from_root(runs.step3.roots.front(), 0.1, so.continuation.solve);
  const PathSolution best = continue_optimal_path(opt0, p.ramp.epsilon, p.D, so.continuation);
  out.add("", io::path_table(best));
  json res{{"T_end", best.T_end()}, {"M", best.M()}, {"m", best.m()}, {"epsilon", best.epsilon()},
           {"D", best.D()}, {"reference_root_T_end", runs.step3.roots.front().T_end()},
           {"reference_root_m", runs.step3.roots.front().m()}};
  try {
    res["t_cross_Ws"] = crossing_time(best, stable_manifold_ws_uplus(best.model()));
  } catch (const Error& e) {
    log(Level::warn, std::string("no W^s(U+) crossing: ") + e.what());
  }
  const double y = get<double>(c, "path", "threshold_y");
  try {
    res["t_cross_threshold"] = crossing_time(best, make_threshold_curve(best.model(), y));
  } catch (const Error& e) {
    log(Level::warn, "no crossing of threshold y = " + std::to_string(y) + ": " + e.what());
  }
  return res;
}

json cmd_sweep(const json& c, Outputs& out, unsigned jobs) {
  const ModelParams p = model_from(c);
  const auto eps = linspace(get<double>(c, "sweep", "epsilon_min"), get<double>(c, "sweep", "epsilon_max"),
                            get<int>(c, "sweep", "epsilon_count"));
  const auto Ds = logspace(get<double>(c, "sweep", "D_min"), get<double>(c, "sweep", "D_max"),
                           get<int>(c, "sweep", "D_count"));
  SweepOptions so;
  so.seeding = seeding_from(c);
  so.jobs = static_cast<int>(jobs);
  const auto g = sweep_epsilon_D(eps, Ds, p, so);
  io::Table t;
  t.columns = {"epsilon", "D", "T_end", "t_cross", "M", "converged"};
  int failed = 0;
  for (std::size_t i = 0; i < eps.size(); ++i)
    for (std::size_t j = 0; j < Ds.size(); ++j) {
      const auto& cell = g.cell(i, j);
      failed += cell.converged ? 0 : 1;
      t.add({eps[i], Ds[j], cell.T_end, cell.t_cross, cell.M, cell.converged ? 1.0 : 0.0});
    }
  out.add("", t);
  json res{{"cells", eps.size() * Ds.size()}, {"failed_cells", failed}};
  try {
    json fits = json::array();
    for (const auto& f : delay_law_fit(g))
      fits.push_back({{"epsilon", f.epsilon}, {"slope", f.fit.slope}, {"intercept", f.fit.intercept},
                      {"r2", f.fit.r2}, {"points", f.fit.n}});
    res["delay_law"] = fits;
  } catch (const InsufficientPoints& e) {
    res["delay_law"] = e.what();
  }
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rate-induced tipping: densities, indicators, ensembles and optimal escape paths"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = ".", format;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::uint64_t> seed;
  std::optional<double> o_eps, o_lmax, o_D, o_t0, o_x0, o_xT, o_xs, o_xe, o_dt;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Monte Carlo seed");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--epsilon", o_eps, "ramp speed");
  app.add_option("--lambda-max", o_lmax, "ramp height");
  app.add_option("--D", o_D, "noise intensity");
  app.add_option("--t0", o_t0, "initial time");
  app.add_option("--x0", o_x0, "initial position");
  app.add_option("--xT", o_xT, "escape level");
  app.add_option("--x-start", o_xs, "lower domain boundary");
  app.add_option("--x-end", o_xe, "upper domain boundary");
  app.add_option("--dt", o_dt, "reporting step");

  std::optional<double> o_tol;
  std::vector<double> o_bracket;
  auto* c_crit = app.add_subcommand("critical-rate", "critical ramp speed by bisection");
  c_crit->add_option("--tol", o_tol, "bisection tolerance");
  c_crit->add_option("--bracket", o_bracket, "lower and upper epsilon")->expected(2);
  auto* c_fpe = app.add_subcommand("fpe", "density evolution and escape rate");
  auto* c_ind = app.add_subcommand("indicators", "lag-1 autocorrelation and variance from the density");
  auto* c_mc = app.add_subcommand("mc", "Euler-Maruyama ensemble");
  std::optional<long> o_paths;
  c_mc->add_option("--paths", o_paths, "number of paths");
  auto* c_path = app.add_subcommand("path", "optimal escape path (Steps 1-3 and continuation)");
  auto* c_sweep = app.add_subcommand("sweep", "optimal paths over the (epsilon, D) grid");
  auto* c_ts = app.add_subcommand("threshold-sweep", "crossing rate of moving thresholds");
  std::vector<double> o_y;
  c_ts->add_option("--y", o_y, "threshold distances");
  auto* c_ds = app.add_subcommand("domain-sweep", "indicators for several upper boundaries");
  std::vector<double> o_xend_values;
  c_ds->add_option("--x-end-values", o_xend_values, "upper boundaries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  json cfg = default_config();
  std::string command;
  for (auto* s : app.get_subcommands()) command = s->get_name();
  try {
    g_level = level_from_env();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot read config " + config_path);
      json user;
      try {
        user = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
      }
      merge_checked(cfg, user, "");
    }
    auto set = [&](const char* sec, const char* key, const auto& v) {
      if (v) cfg[sec][key] = *v;
    };
    set("model", "epsilon", o_eps);
    set("model", "lambda_max", o_lmax);
    set("model", "D", o_D);
    set("model", "t0", o_t0);
    set("model", "x0", o_x0);
    set("model", "xT", o_xT);
    set("model", "x_start", o_xs);
    set("model", "x_end", o_xe);
    set("model", "dt", o_dt);
    set("critical_rate", "tol", o_tol);
    set("ensemble", "n_paths", o_paths);
    if (!o_bracket.empty()) cfg["critical_rate"]["bracket"] = o_bracket;
    if (!o_y.empty()) cfg["threshold_sweep"]["y_values"] = o_y;
    if (!o_xend_values.empty()) cfg["domain_sweep"]["x_end_values"] = o_xend_values;
    if (seed) cfg["ensemble"]["seed"] = *seed;
    if (!format.empty()) cfg["output"]["format"] = format;
    const auto fmt_s = get<std::string>(cfg, "output", "format");
    if (fmt_s != "csv" && fmt_s != "json") throw ConfigError("output.format must be csv or json");
    // validate the shared sections up front
    model_from(cfg).validate();
    fpe_from(cfg);
    make_grid(model_from(cfg), fpe_from(cfg)).validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  }

  json keyed{{"command", command}, {"config", cfg}};
  Outputs out;
  out.dir = out_dir;
  out.format = cfg["output"]["format"].get<std::string>();
  out.stem = command + "_" + hash_hex(keyed.dump());

  const auto t_start = std::chrono::steady_clock::now();
  json results;
  try {
    log(Level::info, "running " + command + " -> " + out.stem);
    if (command == "critical-rate") results = cmd_critical_rate(cfg, out);
    else if (command == "fpe") results = cmd_fpe(cfg, out);
    else if (command == "indicators") results = cmd_indicators(cfg, out);
    else if (command == "mc") results = cmd_mc(cfg, out, jobs, seed);
    else if (command == "path") results = cmd_path(cfg, out);
    else if (command == "sweep") results = cmd_sweep(cfg, out, jobs);
    else if (command == "threshold-sweep") results = cmd_threshold_sweep(cfg, out, jobs);
    else if (command == "domain-sweep") results = cmd_domain_sweep(cfg, out, jobs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["compiler"] = __VERSION__;
  manifest["config_hash"] = hash_hex(keyed.dump());
  manifest["config"] = cfg;
  manifest["jobs"] = jobs;
  manifest["wall_time_s"] = wall;
  json files = json::array();
  for (const auto& f : out.files) files.push_back(f.first);
  manifest["outputs"] = files;
  manifest["results"] = results;
  try {
    write_all(out, manifest);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 1;
  }
  std::cout << results.dump(2) << '\n';
  return 0;
}
