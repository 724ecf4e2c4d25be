#ifndef PBF_IO_HPP
#define PBF_IO_HPP

#include <pbf/process_driver.hpp>

#include <optional>
#include <string>
#include <vector>

namespace pbf
{
  /// Everything a run needs besides the scan path.
  struct RunConfig
  {
    BuildPlan      plan;
    ProcessParams  process;
    SolverSettings solver;
    /// hatch cross-section given in [schedule]; when absent it is derived
    /// from the geometry for every layer
    std::optional<std::vector<Rect>> section;
  };

  /// INI-style text with sections [material], [laser], [mesh], [solver] and
  /// [schedule]. Values are SI unless a unit suffix is given (m, mm, um, s,
  /// ms, us, W, kW, m/s, mm/s, K, deg). Throws ConfigError carrying the
  /// line number on syntax errors, unknown keys and unit mismatches, and
  /// naming the key when a required one is missing.
  RunConfig
  parse_config(const std::string &text);

  /// Normalized form: every key written in SI with round-trip precision.
  std::string
  serialize_config(const RunConfig &config);

  /// Documented keys and defaults, in config syntax.
  std::string
  config_reference();

  /// Line-based scan path:
  ///   layer <k> z=<m>
  ///   track <x0> <y0> <x1> <y1> v=<m/s> P=<W>
  ///   hatch box <x0> <y0> <x1> <y1> dh=<m> dir=<x|y> v=<m/s> P=<W>
  ///   cool <s>
  /// `#` starts a comment. Throws ConfigError with the line number.
  ScanPath
  parse_scanpath(const std::string &text);

  /// Expanded path in the same format, tracks only.
  std::string
  serialize_scanpath(const ScanPath &path);

  std::string
  read_file(const std::string &path);
  void
  write_file(const std::string &path, const std::string &content);

  /// Cell classification written to snapshots.
  enum class MaterialState : int
  {
    powder = 0,
    mushy_or_melt = 1,
    solid = 2,
    inactive = -1
  };

  /// Cell-mean classification: mean corner temperature above the solidus is
  /// melt, otherwise mean r_c >= 0.5 is solid, else powder.
  MaterialState
  classify_cell(const Forest &forest, const ThermalState &state, std::size_t active_cell, const MaterialParams &material);

  /// VTU unstructured grid, appended raw little-endian data. Points
  /// [0, n_dofs) are the DoFs in order; vertices touched only by inactive
  /// cells follow with temperature NaN. Every leaf is written as a
  /// hexahedron with cell data consolidated_fraction, material_state,
  /// refinement_level and active.
  void
  export_snapshot(const std::string &file, const Forest &forest, const ThermalState &state, const MaterialParams &material);

  struct LayerRunMetrics
  {
    int         layer = 0;
    std::size_t n_dofs = 0;
    std::uint64_t n_steps = 0;
    double      mean_step_seconds = 0.0; // scan phase
    double      throughput = 0.0;        // DoFs / s / core, scan phase
    double      wall_seconds = 0.0;
    double      scan_fraction = 0.0;
    double      cooldown_fraction = 0.0;
    double      amr_fraction = 0.0;
    double      output_fraction = 0.0;
  };

  struct RunMetrics
  {
    int                          workers = 1;
    std::vector<LayerRunMetrics> layers;
    double                       total_seconds = 0.0;
    double                       scan_fraction = 0.0;
    double                       cooldown_fraction = 0.0;
    double                       amr_fraction = 0.0;
    double                       output_fraction = 0.0;
  };

  /// DoFs per second per core.
  double
  throughput(double n_dofs, double seconds_per_step, int cores);

  /// T_ref N_ref / (T N).
  double
  parallel_efficiency(double t_ref, int n_ref, double t, int n);

  RunMetrics
  collect_metrics(const BuildResult &result, int workers);

  /// CSV, one row per layer and a final `total` row. With a baseline each
  /// row also carries the parallel efficiency against the baseline's row.
  /// Throws ConfigError when the layer counts differ.
  std::string
  report_metrics(const RunMetrics &metrics, const RunMetrics *baseline = nullptr);
} // namespace pbf

#endif
