#include <pbf/errors.hpp>
#include <pbf/time_integration.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace pbf
{
  namespace
  {
    double
    dot(const std::vector<double> &a, const std::vector<double> &b)
    {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
      return s;
    }

    double
    seconds_since(std::chrono::steady_clock::time_point t0)
    {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    bool
    all_finite(const NodalField &T)
    {
      for (double v : T.values)
        if (!std::isfinite(v))
          return false;
      return true;
    }
  } // namespace

  void
  SolverSettings::validate() const
  {
    if (!(newton_tol > 0.0 && krylov_tol > 0.0 && power_tol > 0.0))
      throw ConfigError("solver tolerances must be positive");
    if (newton_max_iter < 1 || krylov_max_iter < 1 || power_iterations < 1)
      throw ConfigError("solver iteration limits must be positive");
    if (explicit_cooldown_steps < 0)
      throw ConfigError("solver.explicit_cooldown_steps must be non-negative");
    if (!(dt_implicit > 0.0))
      throw ConfigError("solver.dt_implicit must be positive");
    if (!(safety_factor > 0.0 && safety_factor <= 1.0))
      throw ConfigError("solver.safety_factor must be in (0, 1]");
    if (max_halvings < 0)
      throw ConfigError("solver.max_halvings must be non-negative");
  }

  double
  estimate_spectral_radius(const LinearOperator &K,
                           const std::vector<double> &capacity,
                           int n_iter,
                           double tol,
                           std::uint64_t seed)
  {
    const std::size_t                      n = capacity.size();
    std::mt19937_64                        rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double>                    v(n, 0.0), w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (capacity[i] > 0.0)
        v[i] = u(rng);
    auto c_norm = [&](const std::vector<double> &x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (capacity[i] > 0.0)
          s += capacity[i] * x[i] * x[i];
      return std::sqrt(s);
    };
    double nv = c_norm(v);
    if (nv == 0.0)
      return 0.0;
    for (auto &x : v)
      x /= nv;
    double lambda = 0.0, previous = 0.0;
    for (int it = 0; it < n_iter; ++it)
      {
        K(v, w);
        for (std::size_t i = 0; i < n; ++i)
          if (!(capacity[i] > 0.0))
            w[i] = 0.0;
        previous = lambda;
        lambda   = dot(v, w); // v is C-normalized
        for (std::size_t i = 0; i < n; ++i)
          v[i] = capacity[i] > 0.0 ? w[i] / capacity[i] : 0.0;
        nv = c_norm(v);
        if (nv == 0.0)
          break;
        for (auto &x : v)
          x /= nv;
        if (it > 0 && std::abs(lambda - previous) <= tol * std::abs(lambda))
          break;
      }
    return std::max(lambda, previous);
  }

  double
  estimate_spectral_radius(const ThermalOperator &op, int n_iter, double tol)
  {
    const auto         &dofs = op.forest().dofs();
    std::vector<double> cap  = op.lumped_capacity().values;
    for (auto i : dofs.dirichlet_dofs)
      cap[i] = 0.0;
    const auto epoch = op.forest().epoch();
    return estimate_spectral_radius(
      [&](const std::vector<double> &x, std::vector<double> &y) {
        y = op.apply_frozen_stiffness(NodalField{x, epoch}).values;
      },
      cap, n_iter, tol);
  }

  StepCriteria
  compute_step_criteria(double spectral_radius, double radius, double speed, double safety_factor)
  {
    StepCriteria c;
    c.spectral_radius = spectral_radius;
    c.safety_factor   = safety_factor;
    c.dt_stability    = spectral_radius > 0.0 ? 2.0 / spectral_radius : std::numeric_limits<double>::infinity();
    c.dt_accuracy     = speed > 0.0 ? radius / speed : std::numeric_limits<double>::infinity();
    c.dt_used         = safety_factor * std::min(c.dt_stability, c.dt_accuracy);
    if (!(c.dt_used <= c.dt_stability && c.dt_used <= c.dt_accuracy) || !std::isfinite(c.dt_used))
      throw Error("step size exceeds a stability or accuracy bound");
    return c;
  }

  double
  probe_spectral_radius(const MaterialParams &material, double h, const SolverSettings &settings)
  {
    constexpr int n = 8;
    PartGeometry  g;
    g.mode       = GeometryMode::boundary_fitted;
    g.base_plate = {{0, 0, 0}, {n * h, n * h, n * h}};
    MeshParams mp;
    mp.h_powder         = h;
    mp.h_coarse         = h;
    mp.dirichlet_bottom = false;
    const Forest  f = build_coarse_grid(g, mp);
    PhysicsParams pp;
    pp.material = material;
    const ThermalOperator op(f, pp, 4);
    return estimate_spectral_radius(op, settings.power_iterations, settings.power_tol);
  }

  PhaseStats
  run_scan_phase(ThermalState &state,
                 const ThermalOperator &op,
                 const LayerPath &layer,
                 const StepCriteria &criteria,
                 const StepCallback &on_step)
  {
    const auto   t0    = std::chrono::steady_clock::now();
    PhaseStats   stats;
    const double t_end = layer.scan_duration();
    const double dt    = criteria.dt_used;
    double       t     = 0.0;
    while (t < t_end)
      {
        const double step = std::min(dt, t_end - t);
        if (!(step > 1e-15 * dt))
          break;
        const BeamState beam = beam_state(layer, t);
        state.T              = op.explicit_fused_step(state.T, state.history, beam, step);
        t                    = t + step >= t_end - 1e-12 * dt ? t_end : t + step;
        state.time += step;
        ++state.steps;
        ++stats.explicit_steps;
        if (!all_finite(state.T))
          {
            std::ostringstream msg;
            msg << "non-finite temperature in layer " << layer.index << " after step " << stats.explicit_steps
                << " (t = " << state.time << " s): dt = " << step << " s, dt_stability = " << criteria.dt_stability
                << " s, dt_accuracy = " << criteria.dt_accuracy << " s";
            throw InstabilityError(msg.str());
          }
        if (on_step)
          on_step(state);
      }
    stats.seconds = seconds_since(t0);
    return stats;
  }

  IncompleteLU::IncompleteLU(std::vector<std::size_t> row_ptr, std::vector<std::size_t> cols, std::vector<double> vals)
    : ptr_(std::move(row_ptr))
    , col_(std::move(cols))
    , val_(std::move(vals))
  {
    const std::size_t n = ptr_.size() - 1;
    diag_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      {
        auto it = std::lower_bound(col_.begin() + ptr_[i], col_.begin() + ptr_[i + 1], i);
        if (it == col_.begin() + ptr_[i + 1] || *it != i)
          throw SolverError("incomplete factorization needs a full diagonal");
        diag_[i] = std::size_t(it - col_.begin());
      }
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t kk = ptr_[i]; kk < ptr_[i + 1] && col_[kk] < i; ++kk)
        {
          const std::size_t k = col_[kk];
          val_[kk] /= val_[diag_[k]];
          std::size_t jj = kk + 1, kj = diag_[k] + 1;
          while (jj < ptr_[i + 1] && kj < ptr_[k + 1])
            {
              if (col_[jj] == col_[kj])
                val_[jj++] -= val_[kk] * val_[kj++];
              else if (col_[jj] < col_[kj])
                ++jj;
              else
                ++kj;
            }
        }
    for (std::size_t i = 0; i < n; ++i)
      if (!(std::abs(val_[diag_[i]]) > 0.0))
        throw SolverError("zero pivot in incomplete factorization");
  }

  void
  IncompleteLU::solve(const std::vector<double> &b, std::vector<double> &x) const
  {
    const std::size_t n = diag_.size();
    x                   = b;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = ptr_[i]; k < diag_[i]; ++k)
        x[i] -= val_[k] * x[col_[k]];
    for (std::size_t i = n; i-- > 0;)
      {
        for (std::size_t k = diag_[i] + 1; k < ptr_[i + 1]; ++k)
          x[i] -= val_[k] * x[col_[k]];
        x[i] /= val_[diag_[i]];
      }
  }

  IncompleteLU
  probed_ilu(const ThermalOperator &op, const NodalField &T_lin, const HistoryField &history, double dt)
  {
    const std::size_t n = op.n_dofs();
    if (n > probe_dof_limit)
      throw ConfigError("probed incomplete factorization limited to " + std::to_string(probe_dof_limit) + " DoFs");
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
    NodalField e = make_field(op.forest(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      {
        e[j]         = 1.0;
        const auto y = op.apply_jacobian(e, T_lin, history, dt);
        e[j]         = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (y[i] != 0.0)
            rows[i].emplace_back(j, y[i]);
      }
    const auto &dofs = op.forest().dofs();
    std::vector<std::size_t> ptr(n + 1, 0), cols;
    std::vector<double>      vals;
    for (std::size_t i = 0; i < n; ++i)
      {
        if (dofs.is_constrained(i))
          rows[i] = {{i, 1.0}};
        for (auto [j, v] : rows[i])
          {
            cols.push_back(j);
            vals.push_back(v);
          }
        ptr[i + 1] = cols.size();
      }
    return IncompleteLU(std::move(ptr), std::move(cols), std::move(vals));
  }

  KrylovResult
  krylov_solve(const LinearOperator &A, const std::vector<double> &b, const LinearOperator &M, double tol, int max_iter)
  {
    const std::size_t n = b.size();
    KrylovResult      res;
    res.x.assign(n, 0.0);
    const double nb = std::sqrt(dot(b, b));
    if (nb == 0.0)
      return res;
    std::vector<double> r = b, z(n), p(n), q(n);
    if (M)
      M(r, z);
    else
      z = r;
    p         = z;
    double rz = dot(r, z);
    for (int it = 1; it <= max_iter; ++it)
      {
        A(p, q);
        const double pq = dot(p, q);
        if (!(pq > 0.0))
          throw SolverError("conjugate gradients hit a non-positive curvature direction");
        const double alpha = rz / pq;
        for (std::size_t i = 0; i < n; ++i)
          {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
          }
        res.iterations        = it;
        res.relative_residual = std::sqrt(dot(r, r)) / nb;
        if (res.relative_residual <= tol)
          return res;
        if (M)
          M(r, z);
        else
          z = r;
        const double rz_new = dot(r, z);
        const double beta   = rz_new / rz;
        rz                  = rz_new;
        for (std::size_t i = 0; i < n; ++i)
          p[i] = z[i] + beta * p[i];
      }
    throw SolverError("conjugate gradients did not reach relative residual " + std::to_string(tol) + " in " +
                      std::to_string(max_iter) + " iterations (reached " + std::to_string(res.relative_residual) +
                      ")");
  }

  NewtonResult
  implicit_step(ThermalState &state, const ThermalOperator &op, double dt, const SolverSettings &settings)
  {
    const auto  &forest = op.forest();
    const auto  &dofs   = forest.dofs();
    const auto   epoch  = forest.epoch();
    const auto   n      = op.n_dofs();
    NewtonResult nr;

    const NodalField T_n     = state.T;
    const NodalField f_fixed = op.evaluate_parts(T_n, state.history, BeamState{}, false, false, true);
    NodalField       T       = T_n;

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      scale += std::pow(op.lumped_capacity()[i] / dt * T_n[i], 2);
    const double abs_floor = 1e-14 * std::sqrt(scale);

    NodalField   r  = op.implicit_residual(T, T_n, f_fixed, state.history, dt);
    const double r0 = std::sqrt(dot(r.values, r.values));

    LinearOperator                M;
    std::vector<double>           inv_diag;
    std::unique_ptr<IncompleteLU> ilu;
    if (settings.preconditioner == Preconditioner::diagonal)
      {
        const auto d = op.jacobian_diagonal(T_n, state.history, dt);
        inv_diag.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          inv_diag[i] = d[i] > 0.0 ? 1.0 / d[i] : 0.0;
        M = [&](const std::vector<double> &x, std::vector<double> &y) {
          y.resize(x.size());
          for (std::size_t i = 0; i < x.size(); ++i)
            y[i] = inv_diag[i] * x[i];
        };
      }
    else if (settings.preconditioner == Preconditioner::ilu)
      {
        ilu = std::make_unique<IncompleteLU>(probed_ilu(op, T_n, state.history, dt));
        M   = [&](const std::vector<double> &x, std::vector<double> &y) {
          ilu->solve(x, y);
          for (std::size_t i = 0; i < y.size(); ++i)
            if (dofs.is_constrained(i))
              y[i] = 0.0;
        };
      }

    double rn = r0;
    while (rn > std::max(settings.newton_tol * r0, abs_floor))
      {
        if (nr.iterations >= settings.newton_max_iter)
          throw SolverError("Newton did not converge in " + std::to_string(settings.newton_max_iter) +
                            " iterations (relative residual " + std::to_string(rn / r0) + ")");
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i)
          rhs[i] = -r[i];
        const auto kr = krylov_solve(
          [&](const std::vector<double> &x, std::vector<double> &y) {
            y = op.apply_jacobian(NodalField{x, epoch}, T, state.history, dt).values;
          },
          rhs, M, settings.krylov_tol, settings.krylov_max_iter);
        for (std::size_t i = 0; i < n; ++i)
          if (!dofs.is_dirichlet[i])
            T[i] += kr.x[i];
        close_constraints(forest, T);
        ++nr.iterations;
        nr.krylov_iterations += kr.iterations;
        r  = op.implicit_residual(T, T_n, f_fixed, state.history, dt);
        rn = std::sqrt(dot(r.values, r.values));
        if (!std::isfinite(rn))
          throw SolverError("Newton produced a non-finite residual");
      }
    state.T = std::move(T);
    op.update_history(state.T, state.history);
    return nr;
  }

  PhaseStats
  run_cooldown_phase(ThermalState &state,
                     const ThermalOperator &op,
                     double t_cool,
                     const StepCriteria &criteria,
                     const SolverSettings &settings,
                     const StepCallback &on_step)
  {
    const auto t0 = std::chrono::steady_clock::now();
    PhaseStats stats;
    double     t  = 0.0;
    const double dt_e = criteria.dt_used;
    for (int k = 0; k < settings.explicit_cooldown_steps && t < t_cool; ++k)
      {
        const double step = std::min(dt_e, t_cool - t);
        if (!(step > 1e-15 * dt_e))
          {
            t = t_cool;
            break;
          }
        state.T = op.explicit_fused_step(state.T, state.history, BeamState{}, step);
        t       = t + step >= t_cool - 1e-12 * dt_e ? t_cool : t + step;
        state.time += step;
        ++state.steps;
        ++stats.explicit_steps;
        if (!all_finite(state.T))
          throw InstabilityError("non-finite temperature during explicit cool-down: dt = " + std::to_string(step) +
                                 " s, dt_stability = " + std::to_string(criteria.dt_stability) + " s");
        if (on_step)
          on_step(state);
      }
    while (t < t_cool)
      {
        double dt = std::min(settings.dt_implicit, t_cool - t);
        if (!(dt > 1e-12 * settings.dt_implicit))
          break;
        for (int halvings = 0;; ++halvings)
          {
            ThermalState trial = state;
            try
              {
                const auto nr = implicit_step(trial, op, dt, settings);
                stats.newton_iterations += nr.iterations;
                stats.krylov_iterations += nr.krylov_iterations;
                state = std::move(trial);
                break;
              }
            catch (const SolverError &e)
              {
                if (halvings >= settings.max_halvings)
                  throw SolverError(std::string("implicit cool-down failed after ") + std::to_string(halvings) +
                                    " step halvings at t = " + std::to_string(state.time) + " s: " + e.what());
                dt *= 0.5;
                ++stats.halvings;
              }
          }
        t = t + dt >= t_cool - 1e-12 * settings.dt_implicit ? t_cool : t + dt;
        state.time += dt;
        ++state.steps;
        ++stats.implicit_steps;
        if (on_step)
          on_step(state);
      }
    stats.seconds = seconds_since(t0);
    return stats;
  }
} // namespace pbf
