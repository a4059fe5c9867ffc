// Command-line front end: oracle runs, notional-nozzle inspection, synthetic
// sensor generation, model training/evaluation, and the graph-vs-dense
// comparison driver.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "h2jet/notional_nozzle.hpp"
#include "h2jet/oracle.hpp"
#include "h2jet/scenario_io.hpp"
#include "h2jet/stats.hpp"
#include "h2jet/training.hpp"

namespace fs = std::filesystem;
using namespace h2jet;

namespace {

struct Options {
  std::vector<std::string> scenarios;
  std::string sensors_path;
  std::string eval_path;
  std::string out_dir = ".";
  std::string checkpoint;
  std::vector<std::uint64_t> seeds;
  std::string backbone = "graph";
  int epochs = 10000;
  int width = 30;
  int depth = 3;
  int k_neighbors = 1;
  int collocation = 100;
  double w_phy = 1.0;
  double w_re = 1.0;
  double lr = 1e-3;
  bool two_matrix = false;
  bool coordinate_only = false;
  bool fd_derivatives = false;
  int gen_k = 5;
  int gen_total = 20;
  double gen_noise = -1.0;  // < 0: use the scenario file's value
};

std::string join(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw parse_error("cannot open output file '" + path + "'");
  out << text;
}

TrainConfig to_train_config(const Options& o, Backbone kind, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.width = o.width;
  tc.depth = o.depth;
  tc.k_neighbors = o.k_neighbors;
  tc.collocation = o.collocation;
  tc.lr = o.lr;
  tc.w_phy = o.w_phy;
  tc.w_re = o.w_re;
  tc.seed = seed;
  tc.kind = kind;
  tc.two_matrix = o.two_matrix;
  tc.coordinate_only = o.coordinate_only;
  tc.fd_derivatives = o.fd_derivatives;
  return tc;
}

// Synthetic observation protocol: a uniform evaluation grid over the
// scenario's band, with an evenly strided subset observed as sensors.
std::pair<std::vector<SensorReading>, std::vector<SensorReading>> synth_sensors(
    const ScenarioConfig& cfg, const Trajectory& traj, int k, int total, double noise,
    std::uint64_t seed) {
  const auto grid = uniform_positions(cfg.eval_lo, cfg.eval_hi, total);
  std::vector<double> picked;
  for (int i : strided_indices(k, total)) picked.push_back(grid[i]);
  return {sample_sensors(traj, picked, noise, seed), sample_sensors(traj, grid, 0.0, seed)};
}

std::vector<double> positions_of(const std::vector<SensorReading>& rs) {
  std::vector<double> p;
  for (const auto& r : rs) p.push_back(r.s_over_d);
  return p;
}

std::vector<CurveRow> build_curve(const ScenarioConfig& cfg, const Trajectory& traj,
                                  const ModelParams& params, const TrainSetup& su) {
  const Fields<double> f = predict_fields(params, su);
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < su.col.node_count(); ++i) {
    CurveRow r;
    r.s_over_d = su.col.s[i] / cfg.source.d;
    const double rho_phys = f.rho[i] * su.scales.rho_ref;
    r.rho_pred = rho_phys;
    r.y_pred = mass_fraction_from_density_saturating(rho_phys, cfg.ambient, cfg.gas);
    r.x_pred_pct = 100.0 * mole_from_mass(r.y_pred, cfg.gas);
    r.u_pred = f.u[i] * su.scales.u_ref;
    r.b_pred = f.b[i] * su.scales.l_ref;
    r.theta_pred = f.theta[i];
    const SamplePoint p = sample_point(traj, r.s_over_d);
    r.y_oracle = p.y;
    r.u_oracle = p.u;
    rows.push_back(r);
  }
  return rows;
}

int cmd_oracle(const Options& o) {
  fs::create_directories(o.out_dir);
  const ParsedScenario ps = load_scenario(o.scenarios.at(0));
  for (const auto& w : ps.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const ScenarioConfig& cfg = ps.cfg;

  const auto t0 = std::chrono::steady_clock::now();
  const Trajectory traj = integrate(cfg);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string path = join(o.out_dir, cfg.name + "_trajectory.csv");
  write_trajectory_file(path, traj);

  std::printf("scenario          %s (%s)\n", cfg.name.c_str(),
              cfg.orientation == Orientation::Vertical ? "vertical" : "horizontal");
  std::printf("source            d = %.6g m, u = %.6g m/s, rho = %.6g kg/m^3\n",
              cfg.source.d, cfg.source.u, cfg.source.rho);
  std::printf("froude            %.6g (%s)\n", cfg.source.froude,
              to_string(classify_regime(cfg.source.froude)));
  if (cfg.underexpanded)
    std::printf("notional exit     d = %.6g m, u = %.6g m/s, rho = %.6g kg/m^3\n",
                cfg.notional.d, cfg.notional.u, cfg.notional.rho);
  std::printf("march             %zu states to s = %.6g m (%.4g s)\n", traj.states.size(),
              traj.states.back().s, secs);
  std::printf("hydrogen flux     max relative drift %.3e\n",
              max_relative_drift(traj, &hydrogen_flux));
  if (cfg.orientation == Orientation::Horizontal)
    std::printf("x-momentum flux   max relative drift %.3e\n",
                max_relative_drift(traj, &x_momentum_flux));
  std::printf("trajectory file   %s\n", path.c_str());
  return 0;
}

int cmd_nozzle(const Options& o) {
  const ScenarioConfig cfg = load_scenario(o.scenarios.at(0)).cfg;
  if (!cfg.underexpanded)
    throw domain_error("scenario '" + cfg.name + "' is not under-expanded");
  std::printf("vessel            P0 = %.6g Pa, T0 = %.6g K\n", cfg.vessel.pressure,
              cfg.vessel.temperature);
  std::printf("critical ratio    %.6g\n", critical_pressure_ratio(cfg.gas));
  std::printf("throat (level 1)  P1 = %.6g Pa, T1 = %.6g K, rho1 = %.6g kg/m^3, u1 = %.6g m/s\n",
              cfg.throat.pressure, cfg.throat.temperature, cfg.throat.rho, cfg.throat.u);
  std::printf("notional (lvl 2)  d = %.6g m, u2 = %.6g m/s, rho2 = %.6g kg/m^3\n",
              cfg.notional.d, cfg.notional.u, cfg.notional.rho);
  const double mdot1 = cfg.throat.rho * cfg.throat.u * cfg.d_physical * cfg.d_physical;
  const double mdot2 = cfg.notional.rho * cfg.notional.u * cfg.notional.d * cfg.notional.d;
  std::printf("mass check        rho*u*d^2: %.9e vs %.9e (rel %.2e)\n", mdot1, mdot2,
              std::abs(mdot1 - mdot2) / mdot1);
  std::printf("froude            %.6g (%s)\n", cfg.source.froude,
              to_string(classify_regime(cfg.source.froude)));
  return 0;
}

int cmd_gen_sensors(const Options& o, std::uint64_t seed) {
  fs::create_directories(o.out_dir);
  const ScenarioConfig cfg = load_scenario(o.scenarios.at(0)).cfg;
  const Trajectory traj = integrate(cfg);
  const double noise = o.gen_noise >= 0.0 ? o.gen_noise : cfg.sensor_noise;
  const auto [sensors, evals] = synth_sensors(cfg, traj, o.gen_k, o.gen_total, noise, seed);
  const std::string spath = join(o.out_dir, cfg.name + "_sensors.csv");
  const std::string epath = join(o.out_dir, cfg.name + "_eval.csv");
  write_sensor_file(spath, sensors);
  write_sensor_file(epath, evals);
  std::printf("wrote %zu sensors to %s\n", sensors.size(), spath.c_str());
  std::printf("wrote %zu evaluation points to %s\n", evals.size(), epath.c_str());
  return 0;
}

// One (scenario, backbone, seed) training cell.
struct Cell {
  std::string scenario;
  std::string backbone;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double mse_mole_pct = 0.0;
  double mse_mass = 0.0;
  double train_seconds = 0.0;
  double inference_seconds = 0.0;
  ModelParams params;
  TrainReport report;
};

Cell run_cell(const ScenarioConfig& cfg, const std::vector<SensorReading>& sensors,
              const std::vector<SensorReading>& evals, const Options& o, Backbone kind,
              std::uint64_t seed) {
  Cell c;
  c.scenario = cfg.name;
  c.backbone = to_string(kind);
  c.seed = seed;
  const TrainConfig tc = to_train_config(o, kind, seed);
  try {
    auto [params, report] = train(tc, cfg, sensors, positions_of(evals));
    const TrainSetup su = make_setup(cfg, sensors, positions_of(evals), tc);
    const auto t0 = std::chrono::steady_clock::now();
    const EvalResult ev = evaluate_mse(params, cfg, sensors, evals, tc);
    report.inference_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.mse_mole_pct = ev.mse_mole_pct;
    report.mse_mass = ev.mse_mass;
    c.ok = true;
    c.mse_mole_pct = ev.mse_mole_pct;
    c.mse_mass = ev.mse_mass;
    c.train_seconds = report.train_seconds;
    c.inference_seconds = report.inference_seconds;
    c.params = std::move(params);
    c.report = std::move(report);
  } catch (const divergence_error& e) {
    c.error = e.what();
  }
  return c;
}

std::string cell_stem(const Cell& c) {
  return c.scenario + "_" + c.backbone + "_s" + std::to_string(c.seed);
}

int cmd_train(const Options& o, std::uint64_t seed) {
  fs::create_directories(o.out_dir);
  const ScenarioConfig cfg = load_scenario(o.scenarios.at(0)).cfg;
  if (o.backbone == "both")
    throw parse_error("train runs one backbone; use --backbone graph or dense");
  const Backbone kind = backbone_from_string(o.backbone);
  const Trajectory traj = integrate(cfg);

  std::vector<SensorReading> sensors, evals;
  if (!o.sensors_path.empty()) {
    sensors = read_sensor_file(o.sensors_path, cfg);
  } else {
    const double noise = o.gen_noise >= 0.0 ? o.gen_noise : cfg.sensor_noise;
    std::tie(sensors, evals) = synth_sensors(cfg, traj, o.gen_k, o.gen_total, noise, seed);
  }
  if (!o.eval_path.empty()) evals = read_sensor_file(o.eval_path, cfg);

  const TrainConfig tc = to_train_config(o, kind, seed);
  auto [params, report] = train(tc, cfg, sensors, positions_of(evals));
  const TrainSetup su = make_setup(cfg, sensors, positions_of(evals), tc);
  if (!evals.empty()) {
    const auto t0 = std::chrono::steady_clock::now();
    const EvalResult ev = evaluate_mse(params, cfg, sensors, evals, tc);
    report.inference_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.mse_mole_pct = ev.mse_mole_pct;
    report.mse_mass = ev.mse_mass;
  }

  const std::string stem = cfg.name + "_" + o.backbone + "_s" + std::to_string(seed);
  write_text(join(o.out_dir, stem + "_report.json"), report_json(cfg, tc, report));
  write_text(join(o.out_dir, stem + "_timings.json"), timings_json(report));
  write_curve_file(join(o.out_dir, stem + "_curve.csv"), build_curve(cfg, traj, params, su));
  if (!o.checkpoint.empty()) save_checkpoint(params, o.checkpoint);

  std::printf("scenario  %s  backbone %s  seed %llu\n", cfg.name.c_str(), o.backbone.c_str(),
              static_cast<unsigned long long>(seed));
  std::printf("loss      %.4e -> %.4e over %d epochs (%.1f s)\n",
              report.loss_history.front(), report.loss_history.back(), tc.epochs,
              report.train_seconds);
  if (!evals.empty())
    std::printf("MSE       %.4e mole-%%^2, %.4e mass^2 over %zu points\n",
                report.mse_mole_pct, report.mse_mass, evals.size());
  std::printf("report    %s\n", join(o.out_dir, stem + "_report.json").c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const ScenarioConfig cfg = load_scenario(o.scenarios.at(0)).cfg;
  if (o.checkpoint.empty()) throw parse_error("eval requires --checkpoint");
  if (o.eval_path.empty()) throw parse_error("eval requires --eval");
  const ModelParams params = load_checkpoint(o.checkpoint);
  std::vector<SensorReading> sensors;
  if (!o.sensors_path.empty()) sensors = read_sensor_file(o.sensors_path, cfg);
  const auto evals = read_sensor_file(o.eval_path, cfg);
  TrainConfig tc = to_train_config(o, params.kind, params.seed);
  tc.width = params.width;
  tc.depth = params.depth;
  tc.two_matrix = params.two_matrix;
  tc.coordinate_only = params.coordinate_only;
  const EvalResult ev = evaluate_mse(params, cfg, sensors, evals, tc);
  std::printf("MSE  %.6e mole-%%^2, %.6e mass^2 over %zu points\n", ev.mse_mole_pct,
              ev.mse_mass, evals.size());
  return 0;
}

int cmd_compare(const Options& o) {
  fs::create_directories(o.out_dir);
  std::vector<Backbone> kinds;
  if (o.backbone == "both") {
    kinds = {Backbone::Graph, Backbone::Dense};
  } else {
    kinds = {backbone_from_string(o.backbone)};
  }
  std::vector<std::uint64_t> seeds = o.seeds;
  if (seeds.empty()) seeds = {1, 2, 3};

  nlohmann::ordered_json jcells = nlohmann::ordered_json::array();
  nlohmann::ordered_json jmedians = nlohmann::ordered_json::array();
  std::vector<Cell> cells;
  bool any_cell_all_failed = false;

  std::printf("%-26s %-6s %-5s %14s %12s %10s\n", "scenario", "model", "seed",
              "MSE mole-%^2", "train s", "infer s");
  for (const auto& path : o.scenarios) {
    const ScenarioConfig cfg = load_scenario(path).cfg;
    const Trajectory traj = integrate(cfg);
    std::vector<SensorReading> sensors, evals;
    if (!o.sensors_path.empty() && o.scenarios.size() == 1) {
      sensors = read_sensor_file(o.sensors_path, cfg);
      if (o.eval_path.empty()) throw parse_error("compare with --sensors needs --eval");
      evals = read_sensor_file(o.eval_path, cfg);
    } else {
      const double noise = o.gen_noise >= 0.0 ? o.gen_noise : cfg.sensor_noise;
      std::tie(sensors, evals) =
          synth_sensors(cfg, traj, o.gen_k, o.gen_total, noise, seeds.front());
      write_sensor_file(join(o.out_dir, cfg.name + "_sensors.csv"), sensors);
      write_sensor_file(join(o.out_dir, cfg.name + "_eval.csv"), evals);
    }

    for (Backbone kind : kinds) {
      std::vector<double> mse, tsec, isec;
      std::size_t failed = 0;
      for (std::uint64_t seed : seeds) {
        Cell c = run_cell(cfg, sensors, evals, o, kind, seed);
        if (c.ok) {
          const TrainConfig tc = to_train_config(o, kind, seed);
          const TrainSetup su = make_setup(cfg, sensors, positions_of(evals), tc);
          write_text(join(o.out_dir, cell_stem(c) + "_report.json"),
                     report_json(cfg, tc, c.report));
          write_text(join(o.out_dir, cell_stem(c) + "_timings.json"), timings_json(c.report));
          write_curve_file(join(o.out_dir, cell_stem(c) + "_curve.csv"),
                           build_curve(cfg, traj, c.params, su));
          mse.push_back(c.mse_mole_pct);
          tsec.push_back(c.train_seconds);
          isec.push_back(c.inference_seconds);
          std::printf("%-26s %-6s %-5llu %14.4e %12.1f %10.2e\n", c.scenario.c_str(),
                      c.backbone.c_str(), static_cast<unsigned long long>(c.seed),
                      c.mse_mole_pct, c.train_seconds, c.inference_seconds);
        } else {
          ++failed;
          std::printf("%-26s %-6s %-5llu %14s %12s %10s  (%s)\n", c.scenario.c_str(),
                      c.backbone.c_str(), static_cast<unsigned long long>(c.seed), "failed",
                      "-", "-", c.error.c_str());
        }
        nlohmann::ordered_json jc;
        jc["scenario"] = c.scenario;
        jc["backbone"] = c.backbone;
        jc["seed"] = c.seed;
        jc["ok"] = c.ok;
        if (c.ok) {
          jc["mse_mole_pct_sq"] = c.mse_mole_pct;
          jc["mse_mass_sq"] = c.mse_mass;
          jc["train_seconds"] = c.train_seconds;
          jc["inference_seconds"] = c.inference_seconds;
        } else {
          jc["error"] = c.error;
        }
        jcells.push_back(jc);
        cells.push_back(std::move(c));
      }
      if (failed == seeds.size()) any_cell_all_failed = true;
      if (!mse.empty()) {
        nlohmann::ordered_json jm;
        jm["scenario"] = cfg.name;
        jm["backbone"] = to_string(kind);
        jm["runs"] = mse.size();
        jm["median_mse_mole_pct_sq"] = median(mse);
        jm["median_train_seconds"] = median(tsec);
        jm["median_inference_seconds"] = median(isec);
        jm["cfd_reference_seconds"] = cfg.cfd_reference_seconds;
        jmedians.push_back(jm);
        std::printf("%-26s %-6s %-5s %14.4e %12.1f %10.2e  (median of %zu; CFD ref %.0f s)\n",
                    cfg.name.c_str(), to_string(kind), "med", median(mse), median(tsec),
                    median(isec), mse.size(), cfg.cfd_reference_seconds);
      }
    }
  }

  nlohmann::ordered_json j;
  j["version"] = version_string;
  auto& c = j["config"];
  c["epochs"] = o.epochs;
  c["width"] = o.width;
  c["depth"] = o.depth;
  c["k_neighbors"] = o.k_neighbors;
  c["collocation"] = o.collocation;
  c["lr"] = o.lr;
  c["w_phy"] = o.w_phy;
  c["w_re"] = o.w_re;
  c["seeds"] = seeds;
  c["sensors"] = o.gen_k;
  c["eval_points"] = o.gen_total;
  j["cells"] = jcells;
  j["medians"] = jmedians;
  const std::string rpath = join(o.out_dir, "comparison_report.json");
  write_text(rpath, j.dump(2) + "\n");
  std::printf("comparison report %s\n", rpath.c_str());
  return any_cell_all_failed ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hydrogen jet dispersion: integral reference model and "
               "physics-informed graph training"};
  app.require_subcommand(1);
  Options o;

  auto add_scenario = [&](CLI::App* cmd, bool many) {
    auto* opt = cmd->add_option("--scenario", o.scenarios, "scenario file(s)")->required();
    if (!many) opt->expected(1);
    return opt;
  };
  auto add_common_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", o.out_dir, "output directory");
  };
  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--sensors", o.sensors_path, "sensor readings file");
    cmd->add_option("--eval", o.eval_path, "evaluation points file");
    cmd->add_option("--seed", o.seeds, "rng seed (repeatable)");
    cmd->add_option("--backbone", o.backbone, "graph, dense, or both");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--width", o.width, "hidden width");
    cmd->add_option("--depth", o.depth, "hidden layers");
    cmd->add_option("--k-neighbors", o.k_neighbors, "graph neighborhood radius");
    cmd->add_option("--collocation", o.collocation, "collocation node count");
    cmd->add_option("--w-phy", o.w_phy, "physics loss weight");
    cmd->add_option("--w-re", o.w_re, "regression loss weight");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_flag("--two-matrix", o.two_matrix, "separate neighbor weight matrix");
    cmd->add_flag("--coordinate-only", o.coordinate_only, "coordinate-only features");
    cmd->add_flag("--fd-derivatives", o.fd_derivatives,
                  "stencil derivatives instead of exact ones");
    cmd->add_option("--noise", o.gen_noise, "sensor noise sigma (when generating)");
    cmd->add_option("--k", o.gen_k, "sensors to generate (when no --sensors)");
    cmd->add_option("--total", o.gen_total, "evaluation points to generate");
  };

  auto* oracle = app.add_subcommand("oracle", "integrate a scenario and write the trajectory");
  add_scenario(oracle, false);
  add_common_out(oracle);

  auto* nozzle = app.add_subcommand("nozzle", "print the notional-nozzle mapping");
  add_scenario(nozzle, false);

  auto* gen = app.add_subcommand("gen-sensors", "sample synthetic sensors from the oracle");
  add_scenario(gen, false);
  add_common_out(gen);
  gen->add_option("--k", o.gen_k, "number of sensors");
  gen->add_option("--total", o.gen_total, "number of evaluation points");
  gen->add_option("--noise", o.gen_noise, "multiplicative noise sigma");
  gen->add_option("--seed", o.seeds, "rng seed");

  auto* train_cmd = app.add_subcommand("train", "train one model on one scenario");
  add_scenario(train_cmd, false);
  add_common_out(train_cmd);
  add_train_opts(train_cmd);
  train_cmd->add_option("--checkpoint", o.checkpoint, "write trained parameters here");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against references");
  add_scenario(eval_cmd, false);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "trained parameters")->required();
  eval_cmd->add_option("--sensors", o.sensors_path, "sensor readings file");
  eval_cmd->add_option("--eval", o.eval_path, "evaluation points file")->required();
  eval_cmd->add_option("--k-neighbors", o.k_neighbors, "graph neighborhood radius");
  eval_cmd->add_option("--collocation", o.collocation, "collocation node count");

  auto* compare = app.add_subcommand("compare", "train graph and dense models across seeds");
  add_scenario(compare, true);
  add_common_out(compare);
  add_train_opts(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (o.gen_k > o.gen_total)
      throw parse_error("cannot select " + std::to_string(o.gen_k) + " sensors from " +
                        std::to_string(o.gen_total) + " evaluation points");
    const std::uint64_t seed = o.seeds.empty() ? 1 : o.seeds.front();
    if (app.got_subcommand(compare) && compare->count("--backbone") == 0) o.backbone = "both";
    if (app.got_subcommand(oracle)) return cmd_oracle(o);
    if (app.got_subcommand(nozzle)) return cmd_nozzle(o);
    if (app.got_subcommand(gen)) return cmd_gen_sensors(o, seed);
    if (app.got_subcommand(train_cmd)) return cmd_train(o, seed);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(o);
    if (app.got_subcommand(compare)) return cmd_compare(o);
    return 2;
  } catch (const parse_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const divergence_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
