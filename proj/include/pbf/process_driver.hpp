#ifndef PBF_PROCESS_DRIVER_HPP
#define PBF_PROCESS_DRIVER_HPP

#include <pbf/mesh_forest.hpp>
#include <pbf/operators.hpp>
#include <pbf/parallel.hpp>
#include <pbf/time_integration.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pbf
{
  enum class HatchDirection
  {
    x, // tracks parallel to x, offset in y
    y
  };

  struct HatchParams
  {
    double         spacing   = 80e-6; // d_h (m)
    HatchDirection direction = HatchDirection::x;
    bool           reversed  = false; // first track runs towards -x / -y
    double         speed     = 1.0;   // m/s
    double         power     = 100.0; // W
  };

  /// Serpentine hatch over a union of disjoint rectangles. Each rectangle of
  /// width W across the tracks gets n = max(1, floor(W / d_h)) tracks
  /// centered in it; the scan direction alternates from track to track
  /// across the whole layer.
  LayerPath
  generate_hatch(const std::vector<Rect> &section, const HatchParams &hatch, double z_top, int layer_index, double cool_time);

  /// Hatch direction of a layer under a rotation increment that is a
  /// multiple of 90 degrees.
  HatchParams
  rotated_hatch(const HatchParams &base, double rotation_step_deg, int layer);

  /// Layerwise build description.
  struct BuildPlan
  {
    PartGeometry                   geometry;
    int                            n_layers = 0;
    std::vector<std::vector<Rect>> sections; // one per layer, or a single one for all
    HatchParams                    hatch;
    double                         rotation_step_deg = 0.0;
    double                         t_cool            = 1.0;

    /// Scan path with layer k scanned at the top of mesh layer k.
    ScanPath
    scan_path(const MeshParams &mesh) const;
  };

  struct ProcessParams
  {
    PhysicsParams physics;
    MeshParams    mesh;
    int           n_lanes = 4;

    bool
    operator==(const ProcessParams &) const = default;
  };

  struct LayerMetrics
  {
    int           layer = 0;
    std::size_t   n_dofs = 0;
    std::size_t   n_active_cells = 0;
    std::uint64_t scan_steps = 0;
    std::uint64_t cooldown_explicit_steps = 0;
    std::uint64_t cooldown_implicit_steps = 0;
    std::uint64_t newton_iterations = 0;
    std::uint64_t krylov_iterations = 0;
    double        scan_seconds     = 0.0;
    double        cooldown_seconds = 0.0;
    double        amr_seconds      = 0.0;
    double        output_seconds   = 0.0;
    double        wall_seconds     = 0.0; // whole layer
    double        simulated_time   = 0.0; // s of process time in this layer
  };

  struct PartShape
  {
    std::vector<std::uint32_t> cells; // active cell indices
    double                     volume = 0.0;
    std::size_t                components = 0;
    std::size_t                enclosed_voids = 0; // lack-of-fusion indicator
  };

  /// Cells whose mean consolidated fraction is at least `threshold`, base
  /// plate excluded.
  PartShape
  extract_part_shape(const HistoryField &history, const Forest &forest, double threshold = 0.5);

  /// Mesh and fields at a layer boundary.
  struct BuildCheckpoint
  {
    Forest       forest;
    ThermalState state;
    int          next_layer = 0; // index into ScanPath::layers
  };

  struct RunOptions
  {
    int                   threads       = 1;
    bool                  deterministic = true;
    std::optional<double> dt_override; // explicit step instead of the criterion
    /// called after each layer's cool-down (and once before the first layer)
    std::function<void(int layer, const Forest &, const ThermalState &)> on_layer;
    /// called after every time step
    std::function<void(const Forest &, const ThermalState &, bool implicit)> on_step;
    /// called after every mesh update with the plan and the old mesh
    std::function<void(const Forest &old_forest, const HistoryField &old_history, const MeshUpdatePlan &, const Forest &)>
      on_mesh_update;
  };

  struct BuildResult
  {
    BuildCheckpoint           checkpoint;
    StepCriteria              criteria;
    std::vector<LayerMetrics> layers;
    PartShape                 shape;
    double                    total_seconds = 0.0;
  };

  /// Initial state: coarse mesh, uniform T_ambient, base plate consolidated.
  BuildCheckpoint
  initial_checkpoint(const PartGeometry &geometry, const ProcessParams &params);

  /// Step criteria of a run: spectral radius on finest cells and the
  /// fastest scan speed of the path.
  StepCriteria
  build_step_criteria(const ScanPath &path, const ProcessParams &params, const SolverSettings &settings);

  /// Runs path layers [checkpoint.next_layer, last_layer] (all remaining
  /// when last_layer < 0). Each layer activates the mesh up to its index,
  /// scans, then cools down.
  BuildResult
  run_build(BuildCheckpoint checkpoint,
            const ScanPath &path,
            const ProcessParams &params,
            const SolverSettings &settings,
            const RunOptions &options = {},
            int last_layer = -1);

  /// Whole build from the initial state.
  BuildResult
  run_build(const PartGeometry &geometry,
            const ScanPath &path,
            const ProcessParams &params,
            const SolverSettings &settings,
            const RunOptions &options = {});

  /// Two-layer single-track study: 1.0 x 0.2 x 0.2 mm base plate, one
  /// 1 mm track per layer along +x through y = 0, cool-down 0.06 s.
  struct ConvergenceScenario
  {
    PartGeometry   geometry;
    ScanPath       path;
    ProcessParams  params;
    SolverSettings settings;
    double         dt_explicit = 2e-5;
    Point3         observation{0.5e-3, 0.0, 0.24e-3};
  };

  /// Scenario with both time steps divided by `refinement`; the explicit
  /// part of the cool-down keeps its duration.
  ConvergenceScenario
  convergence_scenario(int refinement, double power = 100.0);

  struct Trace
  {
    std::vector<double>       time;
    std::vector<double>       value;
    std::vector<std::uint8_t> phase; // 0 scan, 1 explicit cool-down, 2 implicit
  };

  /// Temperature at the observation point after every step.
  Trace
  run_convergence_scenario(const ConvergenceScenario &s, int threads = 1);

  /// Mini bridge in a build chamber: two legs joined by a deck.
  BuildPlan
  mini_bridge_plan(int n_layers = 20);
  ProcessParams
  mini_bridge_params();
} // namespace pbf

#endif
