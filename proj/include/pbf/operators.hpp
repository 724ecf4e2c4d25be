#ifndef PBF_OPERATORS_HPP
#define PBF_OPERATORS_HPP

#include <pbf/fields.hpp>
#include <pbf/material.hpp>
#include <pbf/mesh_forest.hpp>
#include <pbf/parallel.hpp>
#include <pbf/thermal_physics.hpp>

#include <memory>
#include <vector>

namespace pbf
{
  /// Physical constants shared by every operator.
  struct PhysicsParams
  {
    MaterialParams   material;
    BoundaryParams   boundary;
    HeatSourceParams source;

    bool
    operator==(const PhysicsParams &) const = default;
  };

  /// 1D linear shape data on [0, 1] at the two Gauss points.
  struct ShapeData
  {
    static constexpr double point[2]  = {0.21132486540518711775, 0.78867513459481288225};
    static constexpr double weight[2] = {0.5, 0.5};
    /// value[q][i] = N_i(point[q]) with N_0 = 1 - x, N_1 = x
    static constexpr double value[2][2] = {{0.78867513459481288225, 0.21132486540518711775},
                                           {0.21132486540518711775, 0.78867513459481288225}};
    /// dN_i/dx, constant on the interval
    static constexpr double gradient[2] = {-1.0, 1.0};
  };

  /// Matrix-free operators on the active part of a forest. Cell contributions
  /// are written to per-cell (and per-face) slots; every DoF then pulls its
  /// slots in a fixed order, folding in the hanging-node condensation. The
  /// result is therefore independent of lane width and worker count.
  class ThermalOperator
  {
  public:
    ThermalOperator(const Forest &forest, const PhysicsParams &params, int n_lanes = 4, WorkerPool *pool = nullptr);

    const Forest &
    forest() const
    {
      return *forest_;
    }
    const PhysicsParams &
    params() const
    {
      return params_;
    }
    int
    n_lanes() const
    {
      return n_lanes_;
    }
    std::size_t
    n_dofs() const
    {
      return forest_->dofs().n_dofs();
    }

    /// f(T) = f_diff(T) + f_RE(T) + f_vol. Dirichlet and constrained rows are
    /// zero.
    NodalField
    evaluate_rhs(const NodalField &T, const HistoryField &history, const BeamState &beam) const;

    /// Individual parts of f; `volume` covers diffusion and source.
    NodalField
    evaluate_parts(const NodalField &T,
                   const HistoryField &history,
                   const BeamState &beam,
                   bool volume,
                   bool diffusion,
                   bool faces) const;

    /// Row sums of the condensed consistent capacity matrix. Zero on
    /// constrained DoFs, positive elsewhere.
    const NodalField &
    lumped_capacity() const
    {
      return lumped_;
    }

    /// (C/dt - df_diff/dT) dT with consistent C. Dirichlet entries of dT are
    /// ignored; Dirichlet rows return (C~_ii/dt) dT_i, constrained rows zero.
    NodalField
    apply_jacobian(const NodalField &dT, const NodalField &T_lin, const HistoryField &history, double dt) const;

    /// Backward Euler residual C/dt (T - T_n) - f_diff(T) - f_fixed, where
    /// f_fixed holds the boundary flux at T_n and the source. Dirichlet and
    /// constrained rows are zero.
    NodalField
    implicit_residual(const NodalField &T,
                      const NodalField &T_n,
                      const NodalField &f_fixed,
                      const HistoryField &history,
                      double dt) const;

    /// Approximate diagonal of the Jacobian, for preconditioning.
    NodalField
    jacobian_diagonal(const NodalField &T_lin, const HistoryField &history, double dt) const;

    /// K v with conductivity frozen at max(k_melt, k_solid). Dirichlet and
    /// constrained rows are zero and Dirichlet entries of v are ignored.
    NodalField
    apply_frozen_stiffness(const NodalField &v) const;

    /// T_n + dt C~^-1 f(T_n) in one pull pass, Dirichlet DoFs pinned to
    /// T_ambient, constraints closed; history then advanced from the new
    /// quadrature temperatures.
    NodalField
    explicit_fused_step(const NodalField &T_n, HistoryField &history, const BeamState &beam, double dt) const;

    /// r_c <- max(r_c, g(T)) at every quadrature point.
    void
    update_history(const NodalField &T, HistoryField &history) const;

    /// Temperatures at the quadrature points, cell-major like HistoryField.
    std::vector<double>
    quadrature_values(const NodalField &T) const;

    /// sum_i C~_ii T_i over unconstrained DoFs.
    double
    enthalpy(const NodalField &T) const;

    WorkerPool &
    pool() const
    {
      return *pool_;
    }

  private:
    enum class Mode
    {
      rhs,
      residual,
      jacobian,
      frozen,
      diagonal
    };
    struct Inputs
    {
      const double       *u = nullptr;  // primary nodal input
      const double       *w = nullptr;  // secondary nodal input
      const HistoryField *history = nullptr;
      const BeamState    *beam    = nullptr;
      double              dt      = 1.0;
      bool                diffusion = true;
      bool                source    = true;
    };

    template <int N>
    void
    cell_pass(Mode mode, const Inputs &in, std::size_t b0, std::size_t b1) const;
    template <int N>
    void
    face_pass(const double *T, std::size_t b0, std::size_t b1) const;
    template <int N>
    void
    history_pass(const double *T, HistoryField *h, std::vector<double> *qvals, std::size_t b0, std::size_t b1) const;

    void
    run_cells(Mode mode, const Inputs &in) const;
    void
    run_faces(const double *T) const;
    void
    clear_face_slots() const;
    void
    check_epochs(const NodalField &v) const;
    void
    check_epochs(const HistoryField &h) const;
    /// v with Dirichlet entries zeroed (optional) and constraints closed.
    std::vector<double>
    prepared(const NodalField &v, bool zero_dirichlet) const;
    double
    pull(std::size_t dof, bool squared_weights = false) const;

    const Forest *forest_;
    PhysicsParams params_;
    int           n_lanes_;
    WorkerPool   *pool_;
    std::unique_ptr<WorkerPool> own_pool_;

    std::vector<std::uint32_t> batch_cells_; // n_batches * n_lanes, padded
    std::size_t                n_batches_ = 0;
    std::vector<std::uint32_t> face_batch_; // padded likewise
    std::size_t                n_face_batches_ = 0;
    std::vector<double>        cell_h_;
    std::vector<Point3>        cell_lo_;

    // DoF i pulls slots pull_slot_[pull_ptr_[i] .. pull_ptr_[i+1]) with
    // weights pull_weight_
    std::vector<std::uint64_t> pull_ptr_;
    std::vector<std::uint32_t> pull_slot_;
    std::vector<double>        pull_weight_;

    mutable std::vector<double> slots_;
    NodalField                  lumped_;
    std::vector<double>         inv_lumped_;
  };

  /// Face-local vertex b (0..3) of a cell face in direction `dir` as a cell
  /// vertex index.
  int
  face_vertex(int dir, int b);
} // namespace pbf

#endif
