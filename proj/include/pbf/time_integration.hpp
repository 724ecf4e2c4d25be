#ifndef PBF_TIME_INTEGRATION_HPP
#define PBF_TIME_INTEGRATION_HPP

#include <pbf/fields.hpp>
#include <pbf/material.hpp>
#include <pbf/operators.hpp>
#include <pbf/thermal_physics.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace pbf
{
  struct StepCriteria
  {
    double dt_stability    = 0.0;
    double dt_accuracy     = std::numeric_limits<double>::infinity();
    double dt_used         = 0.0;
    double safety_factor   = 0.4;
    double spectral_radius = 0.0;
  };

  enum class Preconditioner
  {
    none,
    diagonal,
    ilu
  };

  struct SolverSettings
  {
    double         newton_tol              = 1e-8;
    int            newton_max_iter         = 20;
    double         krylov_tol              = 1e-10;
    int            krylov_max_iter         = 2000;
    Preconditioner preconditioner          = Preconditioner::diagonal;
    int            explicit_cooldown_steps = 1000;
    double         dt_implicit             = 2e-2;
    double         safety_factor           = 0.4;
    int            power_iterations        = 200;
    double         power_tol               = 1e-6;
    int            max_halvings            = 3;

    void
    validate() const;
    bool
    operator==(const SolverSettings &) const = default;
  };

  using LinearOperator = std::function<void(const std::vector<double> &, std::vector<double> &)>;

  /// Power iteration for the largest eigenvalue of C^-1 K with C diagonal.
  /// Entries with capacity <= 0 are excluded. Returns the larger of the
  /// last two Rayleigh quotients.
  double
  estimate_spectral_radius(const LinearOperator &K,
                           const std::vector<double> &capacity,
                           int n_iter,
                           double tol,
                           std::uint64_t seed = 1);

  /// Same for the frozen-conductivity stiffness of a thermal operator with
  /// Dirichlet and constrained DoFs removed.
  double
  estimate_spectral_radius(const ThermalOperator &op, int n_iter, double tol);

  /// dt_stability = 2 / rho, dt_accuracy = radius / speed (infinite for
  /// speed 0), dt_used = safety * min of both.
  StepCriteria
  compute_step_criteria(double spectral_radius, double radius, double speed, double safety_factor);

  /// Spectral radius on a uniform block of finest cells with edge h,
  /// consolidated and insulated.
  double
  probe_spectral_radius(const MaterialParams &material, double h, const SolverSettings &settings);

  struct ThermalState
  {
    NodalField    T;
    HistoryField  history;
    double        time  = 0.0; // s since build start
    std::uint64_t steps = 0;
  };

  struct PhaseStats
  {
    std::uint64_t explicit_steps    = 0;
    std::uint64_t implicit_steps    = 0;
    std::uint64_t newton_iterations = 0;
    std::uint64_t krylov_iterations = 0;
    int           halvings          = 0;
    double        seconds           = 0.0; // wall time
  };

  using StepCallback = std::function<void(const ThermalState &)>;

  /// Forward Euler over the scan of one layer. The last step is shortened
  /// to end exactly at the end of the scan. Throws InstabilityError on
  /// non-finite temperatures.
  PhaseStats
  run_scan_phase(ThermalState &state,
                 const ThermalOperator &op,
                 const LayerPath &layer,
                 const StepCriteria &criteria,
                 const StepCallback &on_step = {});

  /// First settings.explicit_cooldown_steps explicit steps at dt_explicit,
  /// then backward Euler with dt_implicit until t_cool has elapsed.
  PhaseStats
  run_cooldown_phase(ThermalState &state,
                     const ThermalOperator &op,
                     double t_cool,
                     const StepCriteria &criteria,
                     const SolverSettings &settings,
                     const StepCallback &on_step = {});

  struct NewtonResult
  {
    int iterations        = 0;
    int krylov_iterations = 0;
  };

  /// One backward Euler step; boundary fluxes at T_n, no source. Throws
  /// SolverError when Newton or the Krylov solver fails.
  NewtonResult
  implicit_step(ThermalState &state, const ThermalOperator &op, double dt, const SolverSettings &settings);

  struct KrylovResult
  {
    std::vector<double> x;
    int                 iterations = 0;
    double              relative_residual = 0.0;
  };

  /// Preconditioned conjugate gradients from a zero initial guess. `M`
  /// applies the preconditioner inverse; empty means none. Throws
  /// SolverError if krylov_max_iter is exceeded.
  KrylovResult
  krylov_solve(const LinearOperator &A,
               const std::vector<double> &b,
               const LinearOperator &M,
               double tol,
               int max_iter);

  /// Incomplete LU with zero fill on a sparse matrix in CSR form.
  class IncompleteLU
  {
  public:
    IncompleteLU(std::vector<std::size_t> row_ptr, std::vector<std::size_t> cols, std::vector<double> vals);
    void
    solve(const std::vector<double> &b, std::vector<double> &x) const;

  private:
    std::vector<std::size_t> ptr_, col_, diag_;
    std::vector<double>      val_;
  };

  /// Jacobian probed column by column with unit vectors; only for small
  /// problems.
  IncompleteLU
  probed_ilu(const ThermalOperator &op, const NodalField &T_lin, const HistoryField &history, double dt);

  inline constexpr std::size_t probe_dof_limit = 20000;
} // namespace pbf

#endif
