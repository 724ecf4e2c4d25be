#ifndef PBF_VERIFICATION_HPP
#define PBF_VERIFICATION_HPP

#include <pbf/fields.hpp>
#include <pbf/material.hpp>
#include <pbf/mesh_forest.hpp>
#include <pbf/operators.hpp>
#include <pbf/process_driver.hpp>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Reference implementations for testing. They share no code with the
// production kernels and are deliberately slow.
namespace pbf::verify
{
  inline constexpr std::size_t dense_dof_limit = 2000;

  struct DenseMatrix
  {
    std::size_t         n = 0;
    std::vector<double> a;

    explicit DenseMatrix(std::size_t n_ = 0)
      : n(n_)
      , a(n_ * n_, 0.0)
    {}
    double &
    operator()(std::size_t i, std::size_t j)
    {
      return a[i * n + j];
    }
    double
    operator()(std::size_t i, std::size_t j) const
    {
      return a[i * n + j];
    }
    std::vector<double>
    apply(const std::vector<double> &x) const;
    /// max |A_ij - A_ji| / max |A_ij|
    double
    asymmetry() const;
  };

  /// Condensed dense system at a temperature state. Rows and columns of
  /// constrained DoFs are zero.
  struct DenseSystem
  {
    std::size_t         n = 0;
    DenseMatrix         capacity;  // consistent C
    DenseMatrix         stiffness; // K(T), so f_diff(T) = -K T
    DenseMatrix         tangent;   // d(K(T) T)/dT with r_c frozen
    std::vector<double> source;
    std::vector<double> boundary; // f_RE(T)
    std::vector<double> rhs;      // f(T) with Dirichlet rows zeroed
    std::vector<double> lumped;   // row sums of C
    std::vector<char>   dirichlet;
    std::vector<char>   constrained;
    /// Hanging-node weights found by brute force: constrained DoF -> masters.
    std::vector<std::vector<std::pair<std::size_t, double>>> masters;

    /// (C/dt + tangent) dT, Dirichlet entries of dT ignored and Dirichlet
    /// rows replaced by lumped/dt dT.
    std::vector<double>
    jacobian_apply(const std::vector<double> &dT, double dt) const;
  };

  /// Element-by-element assembly with plain triple loops over quadrature
  /// points. Throws SizeGuardError above dense_dof_limit DoFs.
  DenseSystem
  dense_assemble(const Forest &forest,
                 const NodalField &T,
                 const HistoryField &history,
                 const PhysicsParams &params,
                 const BeamState &beam);

  struct MaterialReference
  {
    double g;
    double k;
    double dk;
  };

  /// Literal case-by-case evaluation of the material law.
  MaterialReference
  scalar_material_reference(double T, double r_c, const MaterialParams &p);

  struct VoxelBox
  {
    LatticePoint anchor;
    Coord        size = 1;
  };

  /// Number of face-connected components of a set of lattice cubes.
  std::size_t
  connectivity_check(const std::vector<VoxelBox> &cells);

  /// Active cells of `forest` with cell-mean history >= threshold as boxes.
  std::vector<VoxelBox>
  consolidated_cells(const Forest &forest, const HistoryField &history, double threshold, bool skip_base = true);

  struct OracleMesh
  {
    std::string  name;
    Forest       forest;
    HistoryField history;
  };

  /// Small meshes covering a single cell, Dirichlet and free bottoms,
  /// exposed side faces, a boundary-fitted step and one or two levels of
  /// hanging nodes.
  std::vector<OracleMesh>
  oracle_meshes();

  /// Largest relative deviations of the matrix-free operators from the
  /// dense system on one mesh.
  struct OracleCheck
  {
    std::string name;
    std::size_t n_dofs   = 0;
    int         trials   = 0;
    double      rhs      = 0.0;
    double      lumped   = 0.0;
    double      jacobian = 0.0;
    double      seconds  = 0.0;
  };

  /// Randomized states (T over powder to evaporation, random r_c, beam on
  /// the top surface), `trials` per mesh.
  std::vector<OracleCheck>
  oracle_report(int trials, std::uint64_t seed = 7, int n_lanes = 4);

  /// Trace `b` linearly interpolated at the sample times of `a`; returns
  /// max |a - b| over the samples whose phase is in [phase_lo, phase_hi].
  double
  trace_deviation(const Trace &a, const Trace &b, int phase_lo = 0, int phase_hi = 2);

  /// Two-layer single-track temporal convergence study.
  struct ConvergenceStudy
  {
    std::vector<int>    refinements;
    std::vector<Trace>  traces;
    std::vector<double> differences;          // |tr(r_i) - tr(r_i+1)|_inf, whole trace
    std::vector<double> cooldown_differences; // same over cool-down samples only
    double              contraction = 0.0;    // differences[1] / differences[0]
    /// max |mixed - all explicit| at the coarsest and finest refinement
    double switch_deviation        = 0.0;
    double switch_deviation_finest = 0.0;
    double seconds                 = 0.0;
  };

  /// Runs the scenario for each refinement (ascending, each twice the
  /// previous) and the all-explicit counterparts at the first and last.
  ConvergenceStudy
  convergence_study(const std::vector<int> &refinements = {1, 2, 4}, int threads = 1, double power = 100.0);

  /// max |a - b| / max |b|
  double
  relative_deviation(const std::vector<double> &a, const std::vector<double> &b);
} // namespace pbf::verify

#endif
