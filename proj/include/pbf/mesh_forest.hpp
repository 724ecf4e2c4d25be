#ifndef PBF_MESH_FOREST_HPP
#define PBF_MESH_FOREST_HPP

#include <pbf/fields.hpp>
#include <pbf/geometry.hpp>
#include <pbf/material.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace pbf
{
  /// Integer coordinates on the finest lattice. The lattice origin is the
  /// lower corner of the base plate.
  using Coord = std::int64_t;

  struct LatticePoint
  {
    Coord x = 0;
    Coord y = 0;
    Coord z = 0;
    bool
    operator==(const LatticePoint &) const = default;
  };

  enum class CellState : std::uint8_t
  {
    inactive_void,
    active_powder_region, // activated build-chamber cell, part shape implicit
    active                // base plate or boundary-fitted part cell
  };

  struct Cell
  {
    int          level = 0;
    LatticePoint anchor;
    CellState    state = CellState::inactive_void;
    /// Layer containing the top face of the cell, -1 for the base plate.
    int  layer_index            = -1;
    bool initially_consolidated = false;

    bool
    is_active() const
    {
      return state != CellState::inactive_void;
    }
    bool
    operator==(const Cell &) const = default;
  };

  struct MeshParams
  {
    double h_powder         = 40e-6;
    int    n_refine         = 0;
    double h_coarse         = 40e-6;
    int    extra_refinement = 0;    // finest cells per layer height = 2^extra
    double d_haz_layers     = 4.0;  // HAZ depth in powder layers
    double r_coarsen        = 0.9;  // min consolidated fraction for coarsening
    bool   dirichlet_bottom = true; // bottom of the base plate held at T_ambient

    /// Throws ConfigError unless h_coarse = 2^n_refine * h_powder.
    void
    validate() const;
    bool
    operator==(const MeshParams &) const = default;
  };

  struct Constraint
  {
    std::uint32_t                                 slave;
    std::vector<std::pair<std::uint32_t, double>> masters;
  };

  struct DofMap
  {
    /// DoFs of each active cell, local vertex a = i + 2 j + 4 k.
    std::vector<std::array<std::uint32_t, 8>> cell_dofs;
    std::vector<LatticePoint>                 dof_position;
    std::vector<Constraint>                   constraints;
    /// Index into `constraints` for constrained DoFs, -1 otherwise.
    std::vector<std::int32_t>  constraint_of;
    std::vector<std::uint32_t> dirichlet_dofs;
    std::vector<std::uint8_t>  is_dirichlet;
    std::unordered_map<std::uint64_t, std::uint32_t> dof_of_vertex;

    std::size_t
    n_dofs() const
    {
      return dof_position.size();
    }
    bool
    is_constrained(std::size_t dof) const
    {
      return constraint_of[dof] >= 0;
    }
  };

  /// Face of an active cell carrying radiation and evaporation.
  /// Directions: 0 -x, 1 +x, 2 -y, 3 +y, 4 -z, 5 +z.
  struct FaceRecord
  {
    std::uint32_t active_cell;
    int           direction;
    bool
    operator==(const FaceRecord &) const = default;
  };

  template <int N>
  struct CellBatch
  {
    std::array<std::uint32_t, N> cells{}; // active cell indices
    int                          n_filled = 0;

    bool
    lane_valid(int lane) const
    {
      return lane < n_filled;
    }
  };

  /// Runtime-width batch used by the batch builder and tests.
  struct BatchInfo
  {
    std::vector<std::uint32_t> cells;
    std::vector<bool>          active_lane_mask;
  };

  class Forest;

  /// Target mesh of a layer update, already 2:1 balanced.
  struct MeshUpdatePlan
  {
    std::uint64_t     from_epoch = 0;
    int               new_layer  = 0;
    std::vector<Cell> target_cells;
    std::size_t       n_refined   = 0;
    std::size_t       n_coarsened = 0;
    std::size_t       n_activated = 0;
    /// (level, anchor) of every parent created by coarsening, for audits.
    std::vector<std::pair<int, LatticePoint>> coarsened_parents;
  };

  class Forest
  {
  public:
    Forest() = default;

    const MeshParams &
    params() const
    {
      return params_;
    }
    GeometryMode
    mode() const
    {
      return mode_;
    }
    const Point3 &
    origin() const
    {
      return origin_;
    }
    /// Edge length of the finest lattice spacing (m).
    double
    h_fine() const
    {
      return h_fine_;
    }
    int
    max_level() const
    {
      return max_level_;
    }
    Coord
    cell_size(int level) const
    {
      return Coord(1) << (max_level_ - level);
    }
    double
    cell_edge(int level) const
    {
      return h_fine_ * double(cell_size(level));
    }
    Coord
    layer_cells() const
    {
      return layer_cells_;
    }
    Coord
    base_top() const
    {
      return base_top_;
    }
    /// Lattice z of the bottom of layer k.
    Coord
    layer_bottom(int k) const
    {
      return base_top_ + Coord(k) * layer_cells_;
    }
    int
    current_layer() const
    {
      return current_layer_;
    }
    std::uint64_t
    epoch() const
    {
      return epoch_;
    }
    std::array<Coord, 3>
    extent() const
    {
      return extent_;
    }

    const std::vector<Cell> &
    cells() const
    {
      return cells_;
    }
    const std::vector<std::uint32_t> &
    active_cells() const
    {
      return active_cells_;
    }
    const Cell &
    active_cell(std::size_t i) const
    {
      return cells_[active_cells_[i]];
    }
    std::size_t
    n_active_cells() const
    {
      return active_cells_.size();
    }
    /// Index into active_cells() or -1 for an inactive leaf.
    std::int32_t
    active_index_of(std::size_t cell) const
    {
      return active_index_[cell];
    }
    const DofMap &
    dofs() const
    {
      return dofs_;
    }
    const std::vector<FaceRecord> &
    faces() const
    {
      return faces_;
    }

    Point3
    to_physical(const LatticePoint &p) const
    {
      return {origin_.x + h_fine_ * double(p.x), origin_.y + h_fine_ * double(p.y), origin_.z + h_fine_ * double(p.z)};
    }

    /// True if the finest voxel with lower corner v lies in the meshed domain.
    bool
    in_domain(const LatticePoint &v) const;
    /// Leaf containing the finest voxel with lower corner v.
    std::optional<std::uint32_t>
    leaf_containing(const LatticePoint &v) const;
    std::optional<std::uint32_t>
    find_leaf(int level, const LatticePoint &anchor) const;
    /// Active cell (index into active_cells()) whose closure contains the
    /// physical point, if any.
    std::optional<std::uint32_t>
    locate_active(const Point3 &x) const;

    /// Total volume of active cells (m^3).
    double
    active_volume() const;

    /// Returns the first pair of leaves touching each other with a level
    /// difference above one, if any.
    std::optional<std::pair<std::uint32_t, std::uint32_t>>
    find_balance_violation() const;

    friend Forest
    build_coarse_grid(const PartGeometry &, const MeshParams &);
    friend MeshUpdatePlan
    advance_layer(const Forest &, const HistoryField &);
    friend struct ForestBuilder;

  private:
    void
    finalize(std::vector<Cell> leaves);
    void
    build_dofs();
    void
    build_faces();

    MeshParams           params_;
    GeometryMode         mode_ = GeometryMode::build_chamber;
    Point3               origin_;
    double               h_fine_        = 0.0;
    int                  max_level_     = 0;
    Coord                layer_cells_   = 1;
    Coord                base_top_      = 0;
    int                  current_layer_ = -1;
    std::uint64_t        epoch_         = 0;
    std::array<Coord, 3> extent_{};

    std::unordered_set<std::uint64_t> coarse_cells_;
    std::vector<Cell>                 cells_;
    std::unordered_map<std::uint64_t, std::uint32_t> leaf_of_key_;
    std::vector<std::uint32_t> active_cells_;
    std::vector<std::int32_t>  active_index_;
    DofMap                     dofs_;
    std::vector<FaceRecord>    faces_;
  };

  std::uint64_t
  cell_key(int level, const LatticePoint &anchor);
  std::uint64_t
  vertex_key(const LatticePoint &p);

  /// Level-0 mesh of the geometry: base plate active and consolidated,
  /// everything above inactive, current layer -1.
  Forest
  build_coarse_grid(const PartGeometry &geometry, const MeshParams &params);

  /// Plans activation of layer current_layer + 1: that layer and the HAZ
  /// below are refined to the finest level, sibling sets outside the HAZ
  /// whose history is at least r_coarsen everywhere are coarsened, inactive
  /// cells are coarsened as far as balance allows.
  MeshUpdatePlan
  advance_layer(const Forest &forest, const HistoryField &history);

  struct MeshUpdateResult
  {
    Forest                  forest;
    std::vector<NodalField> fields;
    HistoryField            history;
  };

  /// Executes a plan. Nodal fields are injected at surviving vertices,
  /// interpolated trilinearly at new vertices inside the old active region
  /// and set to `T_initial` elsewhere. History is copied from the parent
  /// octant on refinement and averaged per octant on coarsening.
  MeshUpdateResult
  apply_update(const Forest &forest,
               const MeshUpdatePlan &plan,
               const std::vector<NodalField> &fields,
               const HistoryField &history,
               double T_initial);

  /// Partition of the active cells into groups of n_lanes, last one padded.
  std::vector<BatchInfo>
  build_batches(const Forest &forest, int n_lanes);

  /// Faces of the active region carrying radiation and evaporation.
  inline const std::vector<FaceRecord> &
  interface_faces(const Forest &forest)
  {
    return forest.faces();
  }

  /// Overwrites constrained entries with the weighted sum of their masters.
  void
  close_constraints(const Forest &forest, NodalField &v);

  /// Trilinear interpolation of a nodal field at a physical point inside the
  /// active region.
  std::optional<double>
  evaluate_at(const Forest &forest, const NodalField &T, const Point3 &x);

  /// Field with every DoF at `value`, tagged with the forest epoch.
  NodalField
  make_field(const Forest &forest, double value);

  /// History for the active cells of a freshly built forest: 1 for
  /// initially consolidated cells, 0 elsewhere.
  HistoryField
  initial_history(const Forest &forest);

  /// Per-cell mean of the quadrature-point history.
  double
  cell_mean_history(const HistoryField &history, std::size_t active_cell);
} // namespace pbf

#endif
