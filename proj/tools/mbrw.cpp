// Batch front door: config ingestion, command dispatch, seeding, parallelism
// control, artifact persistence. Exit codes: 0 ok, 1 config, 2 math, 3 I/O.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbrw/experiments.hpp"
#include "mbrw/io.hpp"
#include "mbrw/model_zoo.hpp"
#include "mbrw/parallel.hpp"
#include "mbrw/renewal.hpp"
#include "mbrw/spine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbrw;

namespace {

constexpr const char* kVersion = "mbrw 0.1.0";

struct GlobalArgs {
  std::string model_path;
  std::string boundary_path;
  std::string out_dir = "out";
  uint64_t seed = 1;
  int threads = 0;
  int grid_size = 512;
  int depth = 32;
  uint64_t replicas = 10'000;
};

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("MBRW_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return default_thread_count();
}

RunManifest start_manifest(const std::string& command, const GlobalArgs& g,
                           const std::string& config_path, uint64_t config_hash) {
  fs::create_directories(g.out_dir);
  RunManifest m;
  m.command = command;
  m.config_path = config_path;
  m.config_hash = config_hash;
  m.master_seed = g.seed;
  m.threads = resolve_threads(g.threads);
  m.out_dir = g.out_dir;
  m.started_at = current_timestamp();
  m.tool_version = kVersion;
  m.complete = false;
  m.write(g.out_dir + "/manifest.json");
  return m;
}

void finish_manifest(RunManifest& m, const GlobalArgs& g) {
  m.complete = true;
  m.write(g.out_dir + "/manifest.json");
}

ModelSpec load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--model is required");
  return ModelSpec::load(path);
}

struct LoadedBoundary {
  ModelSpec spec;
  DirectionGrid grid;
  BoundaryData bd;
};

LoadedBoundary load_boundary(const GlobalArgs& g) {
  if (g.boundary_path.empty()) throw ConfigError("--boundary is required for this command");
  LoadedBoundary lb{load_model(g.model_path), DirectionGrid::make(2, 2), {}};
  lb.bd = BoundaryData::from_json_text(read_file(g.boundary_path));
  lb.grid = DirectionGrid::make(lb.spec.d, lb.bd.primal.grid_size);
  if (lb.bd.primal.model_hash != lb.spec.hash()) {
    throw ConfigError("boundary data was computed for a different model (hash mismatch)");
  }
  return lb;
}

int cmd_models(const GlobalArgs& g) {
  fs::create_directories(g.out_dir);
  zoo::rank_one_pair().save(g.out_dir + "/rank_one_pair.json");
  zoo::single_matrix().save(g.out_dir + "/single_matrix.json");
  zoo::positive_pair().save(g.out_dir + "/positive_pair.json");
  zoo::scaled_matrix_pair().save(g.out_dir + "/scaled_matrix_pair.json");
  zoo::rank_one_poisson().save(g.out_dir + "/rank_one_poisson.json");
  std::cout << "wrote 5 example models to " << g.out_dir << "\n";
  return 0;
}

int cmd_calibrate(const GlobalArgs& g, const std::string& mode_name, double alpha_target) {
  const ModelSpec base = load_model(g.model_path);
  RunManifest manifest = start_manifest("calibrate", g, g.model_path, base.hash());
  const CalibrationMode mode =
      (mode_name == "solve") ? CalibrationMode::solve_alpha : CalibrationMode::fix_alpha;
  const DirectionGrid grid = DirectionGrid::make(base.d, g.grid_size);
  auto [spec, bd] = calibrate_boundary(base, mode, grid, alpha_target);
  spec.save(g.out_dir + "/calibrated_model.json");
  write_file(g.out_dir + "/boundary.json", bd.to_json() + "\n");
  const auto report =
      check_conditions(spec, std::make_pair(std::abs(bd.M_value), std::abs(bd.M_prime)));
  write_file(g.out_dir + "/conditions.json", report.to_json() + "\n");
  std::cout << "alpha = " << bd.alpha << "\n"
            << "scale_lambda = " << bd.scale_lambda << "\n"
            << "offspring_mean = " << bd.offspring_mean << "\n"
            << "sigma2_alpha = " << bd.sigma2_alpha << "\n"
            << "|M(alpha)| = " << std::abs(bd.M_value)
            << ", |M'(alpha)| = " << std::abs(bd.M_prime) << "\n";
  finish_manifest(manifest, g);
  return 0;
}

int cmd_spectral(const GlobalArgs& g, double s) {
  const ModelSpec spec = load_model(g.model_path);
  RunManifest manifest = start_manifest("spectral", g, g.model_path, spec.hash());
  const DirectionGrid grid = DirectionGrid::make(spec.d, g.grid_size);
  const SpectralData sd = dominant_eigen(spec, s, grid);
  const SpectralData dual = dominant_eigen_dual(spec, s, grid, 1e-12, sd.m_s);
  // Cache keyed by (model hash, s, grid size).
  char name[128];
  std::snprintf(name, sizeof(name), "spectral_%016llx_s%.6f_G%d.json",
                static_cast<unsigned long long>(spec.hash()), s, g.grid_size);
  write_file(g.out_dir + "/" + name, sd.to_json() + "\n");
  write_file(g.out_dir + "/dual_" + name, dual.to_json() + "\n");
  std::cout << "m(s) = " << sd.m_s << " (residual " << sd.residual << ", dual " << dual.m_s
            << ")\n";
  finish_manifest(manifest, g);
  return 0;
}

int cmd_simulate(const GlobalArgs& g, uint64_t particle_cap) {
  const int threads = resolve_threads(g.threads);
  std::optional<LoadedBoundary> lb;
  ModelSpec spec = [&] {
    if (!g.boundary_path.empty()) {
      lb = load_boundary(g);
      return lb->spec;
    }
    return load_model(g.model_path);
  }();
  RunManifest manifest = start_manifest("simulate", g, g.model_path, spec.hash());
  const Direction x0 = Direction::uniform(spec.d);
  const DirectionGrid fallback_grid = DirectionGrid::make(spec.d, 2);

  std::vector<int> record;
  for (int n = 1; n <= g.depth; ++n) record.push_back(n);

  // One CSV row per (replica, generation, functional).
  CsvWriter csv("replica,n,name,value,population", manifest.manifest_key());
  struct Row {
    uint64_t rep;
    int n;
    const char* name;
    double value;
    uint64_t pop;
  };
  std::vector<std::vector<Row>> rows(g.replicas);
  parallel_for(g.replicas, threads, [&](uint64_t rep) {
    SeriesRequest req;
    req.record_at = record;
    std::vector<const SpectralData*> sds;
    if (lb) {
      req.s_values = {lb->bd.alpha};
      sds = {&lb->bd.primal};
      req.want_D = true;
      req.want_W_tilde = true;
    }
    SimOptions opts;
    opts.particle_cap = particle_cap;
    const auto series =
        run_martingale_series(spec, x0, 0.0, req, sds, lb ? &lb->bd : nullptr,
                              lb ? lb->grid : fallback_grid, opts, Rng(g.seed, rep));
    auto& out = rows[rep];
    for (size_t i = 0; i < series.generations.size(); ++i) {
      const int n = series.generations[i];
      const uint64_t pop = series.population[i];
      out.push_back({rep, n, "population", static_cast<double>(pop), pop});
      if (lb) {
        out.push_back({rep, n, "W_alpha", series.W[0][i], pop});
        out.push_back({rep, n, "D", series.D[i], pop});
        out.push_back({rep, n, "W_tilde", series.W_tilde[i], pop});
      }
    }
  });
  std::map<std::pair<int, std::string>, RunningStat> summary;
  for (const auto& rep_rows : rows) {
    for (const auto& r : rep_rows) {
      csv.row({CsvWriter::num(r.rep), std::to_string(r.n), r.name, CsvWriter::num(r.value),
               CsvWriter::num(r.pop)});
      summary[{r.n, r.name}].add(r.value);
    }
  }
  csv.save(g.out_dir + "/series.csv");
  json sj = json::array();
  for (const auto& [key, stat] : summary) {
    sj.push_back(json{{"n", key.first},
                      {"name", key.second},
                      {"mean", stat.mean()},
                      {"se", stat.se()},
                      {"replicas", stat.count()}});
  }
  write_file(g.out_dir + "/summary.json", sj.dump(2) + "\n");
  std::cout << "wrote " << g.out_dir << "/series.csv and summary.json\n";
  finish_manifest(manifest, g);
  return 0;
}

int cmd_spine(const GlobalArgs& g, uint64_t paths) {
  LoadedBoundary lb = load_boundary(g);
  RunManifest manifest = start_manifest("spine", g, g.model_path, lb.spec.hash());
  const int threads = resolve_threads(g.threads);
  const TiltedKernel kernel(lb.spec, lb.grid, lb.bd.primal);
  const HarmonicEvaluator ev = HarmonicEvaluator::constant_one();
  const Direction x0 = Direction::uniform(lb.spec.d);

  std::vector<std::string> lines(paths);
  parallel_for(paths, threads, [&](uint64_t rep) {
    Rng rng(g.seed, rep);
    const auto sim =
        simulate_with_spine(x0, 0.0, lb.spec, kernel, ev, g.depth, rng, /*emit_tree=*/false);
    lines[rep] = sim.path.to_jsonl();
  });
  std::string all;
  for (auto& l : lines) all += l;
  write_file(g.out_dir + "/spine_paths.jsonl", all);
  std::cout << "wrote " << paths << " spine paths to " << g.out_dir << "/spine_paths.jsonl\n";
  finish_manifest(manifest, g);
  return 0;
}

int cmd_renewal(const GlobalArgs& g, const std::string& variant, double t_min, double t_max,
                double y, int horizon) {
  LoadedBoundary lb = load_boundary(g);
  RunManifest manifest = start_manifest("renewal", g, g.model_path, lb.spec.hash());
  const int threads = resolve_threads(g.threads);
  const TiltedKernel primal(lb.spec, lb.grid, lb.bd.primal);
  const TiltedKernel dual(lb.spec, lb.grid, lb.bd.dual);
  const Direction x0 = Direction::uniform(lb.spec.d);
  RenewalOptions opts;
  opts.replicas = g.replicas;
  opts.horizon = horizon;
  opts.y = y;

  if (variant == "v-table") {
    VEstimateOptions vopts;
    vopts.replicas = g.replicas;
    const VAlphaTable tab = estimate_V(primal, vopts, g.seed, threads);
    char name[96];
    std::snprintf(name, sizeof(name), "/vtable_%016llx.json",
                  static_cast<unsigned long long>(lb.spec.hash()));
    write_file(g.out_dir + name, tab.to_json() + "\n");
    std::cout << "V table: certified_error = " << tab.certified_error << ", c in [" << tab.c_low
              << ", " << tab.c_high << "]\n";
  } else if (variant == "green") {
    const auto pts = green_functional(
        primal, x0, [](double v) { return std::exp(-v); }, {5, 10, 20, 40}, horizon, g.replicas,
        g.seed, threads);
    CsvWriter csv("b,value,se,tail_bound", manifest.manifest_key());
    for (const auto& p : pts) {
      csv.row({CsvWriter::num(p.b), CsvWriter::num(p.value), CsvWriter::num(p.se),
               CsvWriter::num(p.tail_bound)});
    }
    csv.save(g.out_dir + "/green.csv");
    std::cout << "wrote " << g.out_dir << "/green.csv\n";
  } else {
    RenewalVariant v;
    if (variant == "killed")
      v = RenewalVariant::killed_primal;
    else if (variant == "ladder-dual")
      v = RenewalVariant::ladder_dual_plus;
    else if (variant == "ladder-primal")
      v = RenewalVariant::ladder_primal_T;
    else
      throw ConfigError("unknown renewal variant: " + variant);
    const TiltedKernel& kernel = (v == RenewalVariant::ladder_dual_plus) ? dual : primal;
    const RenewalScan scan = renewal_scan(kernel, x0, v, y, t_min, t_max, opts, g.seed, threads);
    CsvWriter csv("variant,t,a,estimate,se,tail_bound", manifest.manifest_key());
    for (size_t i = 0; i < scan.estimates.size(); ++i) {
      csv.row({variant, CsvWriter::num(scan.t_min + static_cast<double>(i)), "1",
               CsvWriter::num(scan.estimates[i]), CsvWriter::num(scan.ses[i]),
               CsvWriter::num(scan.tail_bounds[i])});
    }
    csv.save(g.out_dir + "/renewal_scan.csv");
    std::cout << "wrote " << g.out_dir << "/renewal_scan.csv\n";
  }
  finish_manifest(manifest, g);
  return 0;
}

int cmd_verify(const GlobalArgs& g) {
  LoadedBoundary lb = load_boundary(g);
  RunManifest manifest = start_manifest("verify", g, g.model_path, lb.spec.hash());
  const int threads = resolve_threads(g.threads);
  const TiltedKernel primal(lb.spec, lb.grid, lb.bd.primal);
  const TiltedKernel dual(lb.spec, lb.grid, lb.bd.dual);
  const Direction x0 = Direction::uniform(lb.spec.d);
  const bool small_budget = g.replicas < 1000;

  json out;
  out["checks"] = json::array();
  bool hard_ok = true;
  bool stat_ok = true;

  // Hard checks (deterministic).
  {
    const double resid = lb.bd.primal.residual;
    out["eigen_residual"] = resid;
    hard_ok = hard_ok && resid <= 1e-8;
    // r_alpha must reproduce itself through the operator within the residual.
    const auto Pr = apply_Ps(lb.spec, lb.bd.alpha, lb.bd.primal.r, lb.grid);
    double worst = 0.0;
    for (size_t i = 0; i < Pr.size(); ++i) {
      worst = std::max(worst, std::abs(Pr[i] - lb.bd.primal.m_s * lb.bd.primal.r[i]));
    }
    out["eigen_recheck"] = worst;
    hard_ok = hard_ok && worst <= 1e-7;
  }
  {
    std::vector<PathFunctional> fs{
        [](const auto&, const auto&) { return 1.0; },
        [](const auto&, const auto& S) { return std::exp(-(S.back() - S.front())); }};
    const double gap = many_to_one_exact1(lb.spec, primal, x0, 0.0, fs);
    out["many_to_one_exact1"] = gap;
    hard_ok = hard_ok && gap <= 1e-12;
  }
  {
    const auto rb = reversed_bound_check(lb.spec, primal, 64, std::max<uint64_t>(g.replicas, 64),
                                         g.seed ^ 0x1, threads);
    out["reversed_bound"] = json{{"bound", rb.bound},
                                 {"max_gap", rb.max_gap},
                                 {"violations", rb.violations},
                                 {"paths", rb.paths}};
    hard_ok = hard_ok && rb.violations == 0;
  }

  // Statistical checks.
  auto push_report = [&](const VerifyReport& r) {
    out["checks"].push_back(json::parse(r.to_json()));
    if (small_budget) return;  // inconclusive, not a failure
    stat_ok = stat_ok && r.all_pass();
  };
  {
    std::vector<std::pair<std::string, PathFunctional>> fs;
    fs.emplace_back("one", [](const auto&, const auto&) { return 1.0; });
    fs.emplace_back("exp_drop", [](const auto&, const auto& S) {
      return std::exp(-(S.back() - S.front()));
    });
    fs.emplace_back("end_above_start",
                    [](const auto&, const auto& S) { return S.back() >= S.front() ? 1.0 : 0.0; });
    push_report(
        verify_many_to_one(lb.spec, primal, x0, 0.0, 2, fs, g.replicas, g.seed ^ 0x2, threads));
    push_report(
        verify_many_to_one(lb.spec, primal, x0, 0.0, 3, fs, g.replicas, g.seed ^ 0x3, threads));
  }
  {
    std::vector<std::pair<std::string, FactorFunctional>> fs;
    fs.emplace_back("norm_of_product", [](const std::vector<const PosMatrix*>& gs) {
      PosMatrix prod = *gs.back();
      for (int k = static_cast<int>(gs.size()) - 2; k >= 0; --k) prod = prod * (*gs[k]);
      return op_norm(prod);
    });
    fs.emplace_back("first_factor_corner", [](const std::vector<const PosMatrix*>& gs) {
      return (*gs.front())(0, 0) + 0.25 * (*gs.back())(1, 1);
    });
    push_report(verify_exchangeability(lb.spec, 2, fs, g.replicas, g.seed ^ 0x4, threads));
    push_report(verify_exchangeability(lb.spec, 3, fs, g.replicas, g.seed ^ 0x5, threads));
  }
  push_report(verify_spinal_measure(lb.spec, primal, HarmonicEvaluator::constant_one(), x0, 0.0,
                                    4, g.replicas, g.seed ^ 0x6, threads));
  {
    const auto fk = fk_constants(lb.spec.raw_atoms(), lb.spec.d);
    RenewalOptions opts;
    opts.replicas = std::max<uint64_t>(g.replicas, 2000);
    opts.horizon = 16384;
    const auto ds =
        duality_sandwich_check(primal, dual, x0, fk.c1, -10.0, 20.0, opts, g.seed ^ 0x7, threads);
    out["duality_sandwich"] = json{{"fitted_C", ds.fitted_C}, {"empty_rhs_windows", ds.empty_rhs}};
    stat_ok = stat_ok && ds.empty_rhs == 0 && std::isfinite(ds.fitted_C) && ds.fitted_C > 0.0;
  }

  out["hard_checks_pass"] = hard_ok;
  if (small_budget) {
    out["statistical_checks"] = "inconclusive (replica budget < 1000)";
    out["warning"] = true;
  } else {
    out["statistical_checks_pass"] = stat_ok;
  }
  write_file(g.out_dir + "/verify.json", out.dump(2) + "\n");
  std::cout << out.dump(2) << "\n";
  finish_manifest(manifest, g);
  if (!hard_ok) return 2;
  if (!small_budget && !stat_ok) return 2;
  return 0;
}

int cmd_experiment(const GlobalArgs& g, const std::string& name, const std::string& mode_name,
                   double alpha_target, uint64_t particle_cap) {
  const ModelSpec base = load_model(g.model_path);
  RunManifest manifest = start_manifest("experiment " + name, g, g.model_path, base.hash());
  ExperimentConfig config;
  config.base_model = base;
  config.mode = (mode_name == "solve") ? CalibrationMode::solve_alpha : CalibrationMode::fix_alpha;
  config.alpha_target = alpha_target;
  config.grid_size = g.grid_size;
  config.replicas = g.replicas;
  config.seed = g.seed;
  config.threads = resolve_threads(g.threads);
  config.particle_cap = particle_cap;
  if (g.depth > 0) {
    if (name == "seneta-heyde") {
      config.depths = {g.depth, g.depth * 3 / 2, g.depth * 9 / 4};
    } else if (name == "derivative") {
      config.depths = {g.depth / 8, g.depth / 4, g.depth / 2, g.depth};
    } else {
      config.depths = {std::max(g.depth / 16, 1), std::max(g.depth / 4, 1), g.depth};
    }
    for (auto& d : config.depths) d = std::max(d, 1);
  }

  ExperimentReport report;
  if (name == "biggins")
    report = biggins_experiment(config);
  else if (name == "derivative")
    report = derivative_convergence_experiment(config);
  else if (name == "seneta-heyde")
    report = seneta_heyde_experiment(config);
  else if (name == "fixed-point")
    report = smoothing_fixed_point_check(config);
  else
    throw ConfigError("unknown experiment: " + name);

  write_file(g.out_dir + "/report_" + name + ".json", report.to_json() + "\n");
  write_file(g.out_dir + "/report_" + name + ".txt", report.to_text());
  write_file(g.out_dir + "/report_" + name + ".csv", report.rows_to_csv());
  std::cout << report.to_text();
  finish_manifest(manifest, g);
  return report.verdict == "fail" ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix branching random walk toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalArgs g;
  app.add_option("--model", g.model_path, "model JSON file");
  app.add_option("--boundary", g.boundary_path, "boundary data JSON (from calibrate)");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware; env MBRW_THREADS)");
  app.add_option("--grid-size", g.grid_size, "direction grid size");
  app.add_option("--depth", g.depth, "tree depth / walk length");
  app.add_option("--replicas", g.replicas, "Monte Carlo replicas")->check(CLI::PositiveNumber);

  auto* models = app.add_subcommand("models", "write the built-in example models");

  std::string mode_name = "fix";
  double alpha_target = 1.0;
  auto* calibrate = app.add_subcommand("calibrate", "find/install the boundary case");
  calibrate->add_option("--mode", mode_name, "solve | fix")->check(CLI::IsMember({"solve", "fix"}));
  calibrate->add_option("--alpha", alpha_target, "target alpha for fix mode");

  double s_value = 1.0;
  auto* spectral = app.add_subcommand("spectral", "dominant eigen-data at a parameter");
  spectral->add_option("--s", s_value, "transfer-operator parameter");

  uint64_t particle_cap = 2'000'000;
  auto* simulate = app.add_subcommand("simulate", "forward branching simulation");
  simulate->add_option("--particle-cap", particle_cap, "per-generation population cap");

  uint64_t spine_paths = 100;
  auto* spine = app.add_subcommand("spine", "spinal simulation (JSONL paths)");
  spine->add_option("--paths", spine_paths, "number of spine paths");

  std::string renewal_variant = "killed";
  double t_min = -10.0, t_max = 20.0, y_level = 0.0;
  int horizon = 65536;
  auto* renewal = app.add_subcommand("renewal", "renewal measures, V table, Green functional");
  renewal->add_option("--variant", renewal_variant,
                      "killed | ladder-dual | ladder-primal | v-table | green");
  renewal->add_option("--t-min", t_min, "scan window start");
  renewal->add_option("--t-max", t_max, "scan window end");
  renewal->add_option("--y", y_level, "killing level parameter");
  renewal->add_option("--horizon", horizon, "walk horizon");

  auto* verify = app.add_subcommand("verify", "verifier battery");

  std::string experiment_name;
  auto* experiment = app.add_subcommand("experiment", "run a named experiment");
  experiment
      ->add_option("name", experiment_name, "biggins | derivative | seneta-heyde | fixed-point")
      ->required();
  experiment->add_option("--mode", mode_name, "calibration mode: solve | fix");
  experiment->add_option("--alpha", alpha_target, "target alpha for fix mode");
  experiment->add_option("--particle-cap", particle_cap, "per-generation population cap");

  CLI11_PARSE(app, argc, argv);

  try {
    if (models->parsed()) return cmd_models(g);
    if (calibrate->parsed()) return cmd_calibrate(g, mode_name, alpha_target);
    if (spectral->parsed()) return cmd_spectral(g, s_value);
    if (simulate->parsed()) return cmd_simulate(g, particle_cap);
    if (spine->parsed()) return cmd_spine(g, spine_paths);
    if (renewal->parsed()) return cmd_renewal(g, renewal_variant, t_min, t_max, y_level, horizon);
    if (verify->parsed()) return cmd_verify(g);
    if (experiment->parsed())
      return cmd_experiment(g, experiment_name, mode_name, alpha_target, particle_cap);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const MathError& e) {
    std::cerr << "math error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
