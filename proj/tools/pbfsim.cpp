#include <pbf/errors.hpp>
#include <pbf/io.hpp>
#include <pbf/process_driver.hpp>
#include <pbf/verification.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

using namespace pbf;
namespace fs = std::filesystem;

namespace
{
  struct Common
  {
    int         threads       = 1;
    bool        deterministic = false;
    std::string snapshot_every;
    std::string output_dir = ".";
  };

  void
  add_common(CLI::App *app, Common &c)
  {
    app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    app->add_flag("--deterministic", c.deterministic, "static chunk-to-worker schedule");
    app->add_option("--snapshot-every", c.snapshot_every, "write a VTU snapshot every N steps, or 'layer'");
    app->add_option("--output-dir", c.output_dir, "directory for snapshots, metrics and traces");
  }

  std::string
  out_path(const Common &c, const std::string &name)
  {
    fs::create_directories(c.output_dir);
    return (fs::path(c.output_dir) / name).string();
  }

  void
  print_criteria(const StepCriteria &c)
  {
    std::printf("spectral radius   %.6e 1/s\n", c.spectral_radius);
    std::printf("dt_stability      %.6e s\n", c.dt_stability);
    std::printf("dt_accuracy       %.6e s\n", c.dt_accuracy);
    std::printf("safety factor     %.3g\n", c.safety_factor);
    std::printf("dt_used           %.6e s\n", c.dt_used);
  }

  int
  cmd_run(const std::string &config_file, const std::string &path_file, const Common &c, int max_layers)
  {
    const RunConfig cfg  = parse_config(read_file(config_file));
    ScanPath        path = path_file.empty() ? cfg.plan.scan_path(cfg.process.mesh) : parse_scanpath(read_file(path_file));
    if (max_layers >= 0 && std::size_t(max_layers) < path.layers.size())
      path.layers.resize(std::size_t(max_layers));

    RunOptions o;
    o.threads       = c.threads;
    o.deterministic = c.deterministic;
    const auto &mat = cfg.process.physics.material;
    if (c.snapshot_every == "layer")
      o.on_layer = [&](int layer, const Forest &f, const ThermalState &s) {
        char name[64];
        std::snprintf(name, sizeof name, "layer_%04d.vtu", layer + 1);
        export_snapshot(out_path(c, name), f, s, mat);
      };
    else if (!c.snapshot_every.empty())
      {
        char      *end   = nullptr;
        const long every = std::strtol(c.snapshot_every.c_str(), &end, 10);
        if (*end != '\0' || every <= 0)
          throw ConfigError("--snapshot-every needs a positive step count or 'layer'");
        o.on_step = [&, every](const Forest &f, const ThermalState &s, bool) {
          if (s.steps % std::uint64_t(every) == 0)
            {
              char name[64];
              std::snprintf(name, sizeof name, "step_%08llu.vtu", (unsigned long long)s.steps);
              export_snapshot(out_path(c, name), f, s, mat);
            }
        };
      }
    const auto r = run_build(cfg.plan.geometry, path, cfg.process, cfg.solver, o);
    print_criteria(r.criteria);
    const auto metrics = collect_metrics(r, c.threads);
    write_file(out_path(c, "metrics.csv"), report_metrics(metrics));
    std::printf("layers            %zu\n", r.layers.size());
    std::printf("final DoFs        %zu\n", r.checkpoint.forest.dofs().n_dofs());
    std::printf("part cells        %zu (%.6e m^3), %zu component(s), %zu enclosed void(s)\n", r.shape.cells.size(),
                r.shape.volume, r.shape.components, r.shape.enclosed_voids);
    std::printf("wall time         %.3f s (scan %.1f%%, cool-down %.1f%%, AMR %.1f%%, output %.1f%%)\n", r.total_seconds,
                100 * metrics.scan_fraction, 100 * metrics.cooldown_fraction, 100 * metrics.amr_fraction,
                100 * metrics.output_fraction);
    return 0;
  }

  int
  cmd_check_dt(const std::string &config_file, const std::string &path_file)
  {
    const RunConfig cfg  = parse_config(read_file(config_file));
    const ScanPath  path = path_file.empty() ? cfg.plan.scan_path(cfg.process.mesh) : parse_scanpath(read_file(path_file));
    print_criteria(build_step_criteria(path, cfg.process, cfg.solver));
    return 0;
  }

  int
  cmd_bench(const std::string &config_file, const Common &c, int steps)
  {
    const RunConfig cfg  = parse_config(read_file(config_file));
    const ScanPath  path = cfg.plan.scan_path(cfg.process.mesh);
    if (path.layers.empty())
      throw ConfigError("bench needs at least one layer");
    auto       cp   = initial_checkpoint(cfg.plan.geometry, cfg.process);
    const auto plan = advance_layer(cp.forest, cp.state.history);
    auto       up   = apply_update(cp.forest, plan, {cp.state.T}, cp.state.history, cfg.process.physics.boundary.T_ambient);
    WorkerPool pool(c.threads, c.deterministic);
    const ThermalOperator op(up.forest, cfg.process.physics, cfg.process.n_lanes, &pool);
    const auto            crit = build_step_criteria(path, cfg.process, cfg.solver);
    const BeamState       beam = beam_state(path.layers[0], 0.5 * path.layers[0].scan_duration());
    NodalField            T    = up.fields[0];
    HistoryField          h    = up.history;
    T                          = op.explicit_fused_step(T, h, beam, crit.dt_used); // warm-up
    const auto t0              = std::chrono::steady_clock::now();
    for (int i = 0; i < steps; ++i)
      T = op.explicit_fused_step(T, h, beam, crit.dt_used);
    const double s   = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / steps;
    const auto   n   = op.n_dofs();
    std::printf("DoFs              %zu\n", n);
    std::printf("active cells      %zu\n", up.forest.n_active_cells());
    std::printf("lanes             %d\n", cfg.process.n_lanes);
    std::printf("workers           %d\n", c.threads);
    std::printf("time per step     %.6e s\n", s);
    std::printf("throughput        %.6e DoFs/s/core\n", throughput(double(n), s, c.threads));
    return 0;
  }

  int
  cmd_convergence(const Common &c, double power)
  {
    const auto study = verify::convergence_study({1, 2, 4}, c.threads, power);
    std::ostringstream csv;
    csv << "refinement,time_s,temperature_K,phase\n";
    for (std::size_t i = 0; i < study.traces.size(); ++i)
      for (std::size_t k = 0; k < study.traces[i].time.size(); ++k)
        {
          char line[128];
          std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%d\n", study.refinements[i], study.traces[i].time[k],
                        study.traces[i].value[k], int(study.traces[i].phase[k]));
          csv << line;
        }
    write_file(out_path(c, "convergence_trace.csv"), csv.str());
    std::printf("%-6s %-12s %-12s %-8s %-22s %-22s\n", "r", "dt_explicit", "dt_implicit", "samples", "|tr(r)-tr(2r)|_inf K",
                "cool-down part K");
    for (std::size_t i = 0; i < study.refinements.size(); ++i)
      {
        const auto sc = convergence_scenario(study.refinements[i], power);
        std::printf("%-6d %-12.4e %-12.4e %-8zu ", study.refinements[i], sc.dt_explicit, sc.settings.dt_implicit,
                    study.traces[i].time.size());
        if (i < study.differences.size())
          std::printf("%-22.6g %-22.6g\n", study.differences[i], study.cooldown_differences[i]);
        else
          std::printf("%-22s %-22s\n", "-", "-");
      }
    std::printf("contraction ratio %.4f\n", study.contraction);
    std::printf("switch deviation  %.6g K (r = 1), %.6g K (r = 4)\n", study.switch_deviation,
                study.switch_deviation_finest);
    std::printf("trace written to  %s\n", out_path(c, "convergence_trace.csv").c_str());
    return 0;
  }

  int
  cmd_oracle(int trials)
  {
    bool ok = true;
    std::printf("%-20s %6s %6s %12s %12s %12s\n", "mesh", "dofs", "trials", "rhs", "lumped", "jacobian");
    for (const auto &c : verify::oracle_report(trials))
      {
        const bool pass = c.rhs <= 1e-10 && c.lumped <= 1e-10 && c.jacobian <= 1e-10;
        ok &= pass;
        std::printf("%-20s %6zu %6d %12.3e %12.3e %12.3e %s\n", c.name.c_str(), c.n_dofs, c.trials, c.rhs, c.lumped,
                    c.jacobian, pass ? "PASS" : "FAIL");
      }
    return ok ? 0 : 1;
  }
} // namespace

int
main(int argc, char **argv)
{
  CLI::App app{"scan-resolved powder bed fusion thermal simulator"};
  app.require_subcommand(1);

  Common      common;
  std::string config, scanpath;
  int         max_layers = -1, steps = 20, trials = 20;
  double      power      = 100.0;

  auto *run = app.add_subcommand("run", "simulate a build");
  run->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("scanpath", scanpath, "scan path file (default: hatch from the config)")->check(CLI::ExistingFile);
  run->add_option("--layers", max_layers, "stop after this many layers");
  add_common(run, common);

  auto *check = app.add_subcommand("check-dt", "print the time step criteria");
  check->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  check->add_option("scanpath", scanpath, "scan path file")->check(CLI::ExistingFile);

  auto *bench = app.add_subcommand("bench", "explicit kernel throughput on the first layer");
  bench->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  bench->add_option("--steps", steps, "timed steps")->check(CLI::PositiveNumber);
  add_common(bench, common);

  auto *conv = app.add_subcommand("convergence", "two-layer single-track temporal convergence study");
  conv->add_option("--power", power, "laser power (W)");
  add_common(conv, common);

  auto *oracle = app.add_subcommand("oracle", "dense versus matrix-free operator check");
  oracle->add_option("--trials", trials, "random states per mesh")->check(CLI::PositiveNumber);

  auto *ref = app.add_subcommand("config-reference", "print all configuration keys and defaults");

  CLI11_PARSE(app, argc, argv);
  try
    {
      if (*run)
        return cmd_run(config, scanpath, common, max_layers);
      if (*check)
        return cmd_check_dt(config, scanpath);
      if (*bench)
        return cmd_bench(config, common, steps);
      if (*conv)
        return cmd_convergence(common, power);
      if (*oracle)
        return cmd_oracle(trials);
      if (*ref)
        {
          std::cout << config_reference();
          return 0;
        }
    }
  catch (const std::exception &e)
    {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  return 0;
}
