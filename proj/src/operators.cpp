#include <pbf/errors.hpp>
#include <pbf/lane.hpp>
#include <pbf/operators.hpp>

#include <algorithm>
#include <cmath>

namespace pbf
{
  namespace
  {
    using SD = ShapeData;

    constexpr std::size_t batch_grain = 32;
    constexpr std::size_t dof_grain   = 4096;

    // Values and reference gradients of a trilinear field at the 8 Gauss
    // points from its 8 vertex values (sum factorization, one direction at a
    // time).
    template <int N>
    void
    interpolate(const LaneValue<N> (&v)[8],
                LaneValue<N> (&val)[8],
                LaneValue<N> (&gx)[8],
                LaneValue<N> (&gy)[8],
                LaneValue<N> (&gz)[8])
    {
      using L = LaneValue<N>;
      L ax[8], dx[8];
      for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 2; ++j)
          {
            const L &v0 = v[2 * j + 4 * k], &v1 = v[1 + 2 * j + 4 * k];
            for (int q = 0; q < 2; ++q)
              {
                ax[q + 2 * j + 4 * k] = SD::value[q][0] * v0 + SD::value[q][1] * v1;
                dx[q + 2 * j + 4 * k] = v1 - v0;
              }
          }
      L axy[8], dxy[8], day[8];
      for (int k = 0; k < 2; ++k)
        for (int qx = 0; qx < 2; ++qx)
          {
            const int i0 = qx + 4 * k, i1 = qx + 2 + 4 * k;
            for (int qy = 0; qy < 2; ++qy)
              {
                axy[qx + 2 * qy + 4 * k] = SD::value[qy][0] * ax[i0] + SD::value[qy][1] * ax[i1];
                dxy[qx + 2 * qy + 4 * k] = SD::value[qy][0] * dx[i0] + SD::value[qy][1] * dx[i1];
                day[qx + 2 * qy + 4 * k] = ax[i1] - ax[i0];
              }
          }
      for (int p = 0; p < 4; ++p)
        for (int qz = 0; qz < 2; ++qz)
          {
            const int q = p + 4 * qz;
            val[q]      = SD::value[qz][0] * axy[p] + SD::value[qz][1] * axy[p + 4];
            gx[q]       = SD::value[qz][0] * dxy[p] + SD::value[qz][1] * dxy[p + 4];
            gy[q]       = SD::value[qz][0] * day[p] + SD::value[qz][1] * day[p + 4];
            gz[q]       = axy[p + 4] - axy[p];
          }
    }

    // Transpose of interpolate: out[a] = sum_q V[q] N_a(q) + F[q] . grad N_a(q)
    template <int N>
    void
    integrate(const LaneValue<N> (&V)[8],
              const LaneValue<N> (&Fx)[8],
              const LaneValue<N> (&Fy)[8],
              const LaneValue<N> (&Fz)[8],
              LaneValue<N> (&out)[8])
    {
      using L = LaneValue<N>;
      L bv[8], bx[8], by[8];
      for (int p = 0; p < 4; ++p)
        {
          const L sz = Fz[p] + Fz[p + 4];
          for (int k = 0; k < 2; ++k)
            {
              bv[p + 4 * k] = SD::value[0][k] * V[p] + SD::value[1][k] * V[p + 4] + SD::gradient[k] * sz;
              bx[p + 4 * k] = SD::value[0][k] * Fx[p] + SD::value[1][k] * Fx[p + 4];
              by[p + 4 * k] = SD::value[0][k] * Fy[p] + SD::value[1][k] * Fy[p + 4];
            }
        }
      L cv[8], cx[8];
      for (int k = 0; k < 2; ++k)
        for (int qx = 0; qx < 2; ++qx)
          {
            const int i0 = qx + 4 * k, i1 = qx + 2 + 4 * k;
            const L   sy = by[i0] + by[i1];
            for (int j = 0; j < 2; ++j)
              {
                cv[qx + 2 * j + 4 * k] = SD::value[0][j] * bv[i0] + SD::value[1][j] * bv[i1] + SD::gradient[j] * sy;
                cx[qx + 2 * j + 4 * k] = SD::value[0][j] * bx[i0] + SD::value[1][j] * bx[i1];
              }
          }
      for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 2; ++j)
          {
            const int i0 = 2 * j + 4 * k, i1 = 1 + 2 * j + 4 * k;
            const L   sx = cx[i0] + cx[i1];
            for (int i = 0; i < 2; ++i)
              out[i + 2 * j + 4 * k] = SD::value[0][i] * cv[i0] + SD::value[1][i] * cv[i1] + SD::gradient[i] * sx;
          }
    }
  } // namespace

  int
  face_vertex(int dir, int b)
  {
    const int axis = dir / 2, side = dir % 2;
    const int u = axis == 0 ? 1 : 0;
    const int v = axis == 2 ? 1 : 2;
    return side << axis | (b & 1) << u | ((b >> 1) & 1) << v;
  }

  ThermalOperator::ThermalOperator(const Forest &forest, const PhysicsParams &params, int n_lanes, WorkerPool *pool)
    : forest_(&forest)
    , params_(params)
    , n_lanes_(n_lanes)
    , pool_(pool)
  {
    if (!pool_)
      {
        own_pool_ = std::make_unique<WorkerPool>(1, true);
        pool_     = own_pool_.get();
      }
    const auto batches = build_batches(forest, n_lanes);
    n_batches_         = batches.size();
    for (const auto &b : batches)
      batch_cells_.insert(batch_cells_.end(), b.cells.begin(), b.cells.end());

    const std::size_t nc = forest.n_active_cells();
    cell_h_.resize(nc);
    cell_lo_.resize(nc);
    for (std::size_t k = 0; k < nc; ++k)
      {
        const Cell &c = forest.active_cell(k);
        cell_h_[k]    = forest.cell_edge(c.level);
        cell_lo_[k]   = forest.to_physical(c.anchor);
      }

    const auto       &faces = forest.faces();
    const std::size_t nf    = faces.size();
    n_face_batches_         = (nf + n_lanes - 1) / n_lanes;
    face_batch_.resize(n_face_batches_ * n_lanes);
    for (std::size_t i = 0; i < face_batch_.size(); ++i)
      face_batch_[i] = std::uint32_t(std::min(i, nf - 1));

    // pull lists in slot order
    const auto &d  = forest.dofs();
    const auto  nd = d.n_dofs();
    std::vector<std::vector<std::pair<std::uint32_t, double>>> lists(nd);
    auto add = [&](std::uint32_t slot, std::uint32_t dof) {
      const auto ci = d.constraint_of[dof];
      if (ci < 0)
        lists[dof].emplace_back(slot, 1.0);
      else
        for (auto [m, w] : d.constraints[ci].masters)
          lists[m].emplace_back(slot, w);
    };
    for (std::size_t k = 0; k < nc; ++k)
      for (int a = 0; a < 8; ++a)
        add(std::uint32_t(8 * k + a), d.cell_dofs[k][a]);
    for (std::size_t f = 0; f < nf; ++f)
      for (int b = 0; b < 4; ++b)
        add(std::uint32_t(8 * nc + 4 * f + b), d.cell_dofs[faces[f].active_cell][face_vertex(faces[f].direction, b)]);
    pull_ptr_.assign(nd + 1, 0);
    for (std::size_t i = 0; i < nd; ++i)
      {
        std::sort(lists[i].begin(), lists[i].end());
        pull_ptr_[i + 1] = pull_ptr_[i] + lists[i].size();
      }
    pull_slot_.reserve(pull_ptr_[nd]);
    pull_weight_.reserve(pull_ptr_[nd]);
    for (auto &l : lists)
      for (auto [s, w] : l)
        {
          pull_slot_.push_back(s);
          pull_weight_.push_back(w);
        }
    slots_.assign(8 * nc + 4 * nf, 0.0);

    // lumped capacity
    const double rc = params_.material.volumetric_capacity();
    for (std::size_t k = 0; k < nc; ++k)
      std::fill_n(slots_.begin() + 8 * k, 8, rc * cell_h_[k] * cell_h_[k] * cell_h_[k] / 8.0);
    lumped_ = make_field(forest, 0.0);
    inv_lumped_.assign(nd, 0.0);
    for (std::size_t i = 0; i < nd; ++i)
      {
        if (d.is_constrained(i))
          continue;
        lumped_[i] = pull(i);
        if (!(lumped_[i] > 0.0))
          throw Error("non-positive lumped capacity at DoF " + std::to_string(i));
        inv_lumped_[i] = 1.0 / lumped_[i];
      }
  }

  void
  ThermalOperator::check_epochs(const NodalField &v) const
  {
    if (v.epoch != forest_->epoch() || v.size() != n_dofs())
      throw StaleDataError("nodal field epoch " + std::to_string(v.epoch) + " does not match mesh epoch " +
                           std::to_string(forest_->epoch()));
  }

  void
  ThermalOperator::check_epochs(const HistoryField &h) const
  {
    if (h.epoch != forest_->epoch() || h.r_c.size() != 8 * forest_->n_active_cells())
      throw StaleDataError("history field epoch " + std::to_string(h.epoch) + " does not match mesh epoch " +
                           std::to_string(forest_->epoch()));
  }

  std::vector<double>
  ThermalOperator::prepared(const NodalField &v, bool zero_dirichlet) const
  {
    NodalField p = v;
    if (zero_dirichlet)
      for (auto i : forest_->dofs().dirichlet_dofs)
        p[i] = 0.0;
    close_constraints(*forest_, p);
    return std::move(p.values);
  }

  double
  ThermalOperator::pull(std::size_t dof, bool squared_weights) const
  {
    double s = 0.0;
    for (auto j = pull_ptr_[dof]; j < pull_ptr_[dof + 1]; ++j)
      {
        const double w = squared_weights ? pull_weight_[j] * pull_weight_[j] : pull_weight_[j];
        s += w * slots_[pull_slot_[j]];
      }
    return s;
  }

  template <int N>
  void
  ThermalOperator::cell_pass(Mode mode, const Inputs &in, std::size_t b0, std::size_t b1) const
  {
    using L             = LaneValue<N>;
    const auto &dofs    = forest_->dofs();
    const auto &mat     = params_.material;
    const double rc     = mat.volumetric_capacity();
    const double k_frozen = std::max(mat.k_melt, mat.k_solid);
    const std::size_t nc = forest_->n_active_cells();
    const bool   with_source =
      mode == Mode::rhs && in.source && in.beam && in.beam->active && in.beam->power > 0.0;
    const double cutoff = source_cutoff_radii * params_.source.radius;

    for (std::size_t b = b0; b < b1; ++b)
      {
        const std::uint32_t *cells = &batch_cells_[b * N];
        L                    h;
        for (int l = 0; l < N; ++l)
          h[l] = cell_h_[cells[l]];

        L out[8];
        if (mode == Mode::diagonal)
          {
            // diagonal of the cell matrix, vertex by vertex
            L tv[8];
            for (int a = 0; a < 8; ++a)
              for (int l = 0; l < N; ++l)
                tv[a][l] = in.u[dofs.cell_dofs[cells[l]][a]];
            L val[8], gx[8], gy[8], gz[8];
            interpolate(tv, val, gx, gy, gz);
            L kq[8];
            for (int q = 0; q < 8; ++q)
              {
                L r;
                for (int l = 0; l < N; ++l)
                  r[l] = in.history->r_c[8 * cells[l] + q];
                kq[q] = conductivity(val[q], r, mat);
              }
            for (int a = 0; a < 8; ++a)
              {
                const int i = a & 1, j = (a >> 1) & 1, k = (a >> 2) & 1;
                L         acc(0.0);
                for (int q = 0; q < 8; ++q)
                  {
                    const int    qx = q & 1, qy = (q >> 1) & 1, qz = (q >> 2) & 1;
                    const double n  = SD::value[qx][i] * SD::value[qy][j] * SD::value[qz][k];
                    const double dx = SD::gradient[i] * SD::value[qy][j] * SD::value[qz][k];
                    const double dy = SD::value[qx][i] * SD::gradient[j] * SD::value[qz][k];
                    const double dz = SD::value[qx][i] * SD::value[qy][j] * SD::gradient[k];
                    acc += h * h * h * (rc / in.dt * n * n / 8.0) + h * kq[q] * ((dx * dx + dy * dy + dz * dz) / 8.0);
                  }
                out[a] = acc;
              }
          }
        else
          {
            L uv[8];
            for (int a = 0; a < 8; ++a)
              for (int l = 0; l < N; ++l)
                uv[a][l] = in.u[dofs.cell_dofs[cells[l]][a]];
            L uq[8], ux[8], uy[8], uz[8];
            interpolate(uv, uq, ux, uy, uz);
            L wq[8], wx[8], wy[8], wz[8];
            if (in.w)
              {
                L wv[8];
                for (int a = 0; a < 8; ++a)
                  for (int l = 0; l < N; ++l)
                    wv[a][l] = in.w[dofs.cell_dofs[cells[l]][a]];
                interpolate(wv, wq, wx, wy, wz);
              }

            const L vol_w = h * h * h * (1.0 / 8.0);
            const L grad_w = h * (1.0 / 8.0);
            L       V[8], Fx[8], Fy[8], Fz[8];

            L near(0.0);
            if (with_source)
              for (int l = 0; l < N; ++l)
                {
                  const Point3 &lo = cell_lo_[cells[l]];
                  const double  ex = std::max({lo.x - in.beam->position.x, in.beam->position.x - (lo.x + h[l]), 0.0});
                  const double  ey = std::max({lo.y - in.beam->position.y, in.beam->position.y - (lo.y + h[l]), 0.0});
                  near[l]          = ex * ex + ey * ey <= cutoff * cutoff ? 1.0 : 0.0;
                }

            for (int q = 0; q < 8; ++q)
              {
                const int qx = q & 1, qy = (q >> 1) & 1, qz = (q >> 2) & 1;
                if (mode == Mode::frozen)
                  {
                    V[q]  = L(0.0);
                    Fx[q] = grad_w * ux[q] * k_frozen;
                    Fy[q] = grad_w * uy[q] * k_frozen;
                    Fz[q] = grad_w * uz[q] * k_frozen;
                    continue;
                  }
                L r;
                for (int l = 0; l < N; ++l)
                  r[l] = in.history->r_c[8 * cells[l] + q];
                const L k = conductivity(uq[q], r, mat);
                if (mode == Mode::rhs)
                  {
                    if (in.diffusion)
                      {
                        Fx[q] = -(grad_w * k * ux[q]);
                        Fy[q] = -(grad_w * k * uy[q]);
                        Fz[q] = -(grad_w * k * uz[q]);
                      }
                    else
                      Fx[q] = Fy[q] = Fz[q] = L(0.0);
                    V[q] = L(0.0);
                    if (with_source)
                      {
                        L x, y, z;
                        for (int l = 0; l < N; ++l)
                          {
                            const Point3 &lo = cell_lo_[cells[l]];
                            x[l]             = lo.x + h[l] * SD::point[qx];
                            y[l]             = lo.y + h[l] * SD::point[qy];
                            z[l]             = lo.z + h[l] * SD::point[qz];
                          }
                        V[q] = vol_w * (volumetric_source(x, y, z, *in.beam, params_.source) * near);
                      }
                  }
                else if (mode == Mode::residual)
                  {
                    V[q]  = vol_w * wq[q] * (rc / in.dt);
                    Fx[q] = grad_w * k * ux[q];
                    Fy[q] = grad_w * k * uy[q];
                    Fz[q] = grad_w * k * uz[q];
                  }
                else // jacobian
                  {
                    const L dk = conductivity_derivative(uq[q], r, mat) * wq[q];
                    V[q]       = vol_w * wq[q] * (rc / in.dt);
                    Fx[q]      = grad_w * (k * wx[q] + dk * ux[q]);
                    Fy[q]      = grad_w * (k * wy[q] + dk * uy[q]);
                    Fz[q]      = grad_w * (k * wz[q] + dk * uz[q]);
                  }
              }
            integrate(V, Fx, Fy, Fz, out);
          }

        for (int l = 0; l < N; ++l)
          {
            if (b * N + l >= nc)
              break;
            double *s = &slots_[8 * std::size_t(cells[l])];
            for (int a = 0; a < 8; ++a)
              s[a] = out[a][l];
          }
      }
  }

  template <int N>
  void
  ThermalOperator::face_pass(const double *T, std::size_t b0, std::size_t b1) const
  {
    using L             = LaneValue<N>;
    const auto &faces   = forest_->faces();
    const auto &dofs    = forest_->dofs();
    const auto &bp      = params_.boundary;
    const double c      = params_.material.specific_heat;
    const std::size_t nc = forest_->n_active_cells();
    for (std::size_t b = b0; b < b1; ++b)
      {
        const std::uint32_t *fi = &face_batch_[b * N];
        L                    tv[4], h;
        for (int l = 0; l < N; ++l)
          {
            const auto &f = faces[fi[l]];
            h[l]          = cell_h_[f.active_cell];
            for (int v = 0; v < 4; ++v)
              tv[v][l] = T[dofs.cell_dofs[f.active_cell][face_vertex(f.direction, v)]];
          }
        L flux[4];
        for (int q = 0; q < 4; ++q)
          {
            const int qu = q & 1, qv = q >> 1;
            const L   Tq = (SD::value[qu][0] * tv[0] + SD::value[qu][1] * tv[1]) * SD::value[qv][0] +
                         (SD::value[qu][0] * tv[2] + SD::value[qu][1] * tv[3]) * SD::value[qv][1];
            L qn(0.0);
            if (bp.radiation)
              qn += radiation_flux(Tq, bp);
            if (bp.evaporation)
              qn += evaporation_flux(Tq, bp, c);
            flux[q] = qn;
          }
        const L area_w = h * h * (1.0 / 4.0);
        for (int l = 0; l < N; ++l)
          {
            const std::size_t f = b * N + l;
            if (f >= faces.size())
              break;
            for (int v = 0; v < 4; ++v)
              {
                const int iu = v & 1, iv = v >> 1;
                double    s  = 0.0;
                for (int q = 0; q < 4; ++q)
                  s += SD::value[q & 1][iu] * SD::value[q >> 1][iv] * flux[q][l];
                slots_[8 * nc + 4 * f + v] = -(area_w[l] * s);
              }
          }
      }
  }

  template <int N>
  void
  ThermalOperator::history_pass(const double *T,
                                HistoryField *hist,
                                std::vector<double> *qvals,
                                std::size_t b0,
                                std::size_t b1) const
  {
    using L          = LaneValue<N>;
    const auto &dofs = forest_->dofs();
    const std::size_t nc = forest_->n_active_cells();
    for (std::size_t b = b0; b < b1; ++b)
      {
        const std::uint32_t *cells = &batch_cells_[b * N];
        L                    tv[8];
        for (int a = 0; a < 8; ++a)
          for (int l = 0; l < N; ++l)
            tv[a][l] = T[dofs.cell_dofs[cells[l]][a]];
        L val[8], gx[8], gy[8], gz[8];
        interpolate(tv, val, gx, gy, gz);
        for (int q = 0; q < 8; ++q)
          {
            L r_new;
            if (hist)
              {
                L r;
                for (int l = 0; l < N; ++l)
                  r[l] = hist->r_c[8 * cells[l] + q];
                r_new = update_consolidated(r, val[q], params_.material);
              }
            for (int l = 0; l < N; ++l)
              {
                if (b * N + l >= nc)
                  break;
                if (hist)
                  hist->r_c[8 * cells[l] + q] = r_new[l];
                if (qvals)
                  (*qvals)[8 * cells[l] + q] = val[q][l];
              }
          }
      }
  }

  void
  ThermalOperator::run_cells(Mode mode, const Inputs &in) const
  {
    pool_->for_range(n_batches_, batch_grain, [&](std::size_t b0, std::size_t b1) {
      switch (n_lanes_)
        {
          case 1:
            cell_pass<1>(mode, in, b0, b1);
            break;
          case 2:
            cell_pass<2>(mode, in, b0, b1);
            break;
          case 4:
            cell_pass<4>(mode, in, b0, b1);
            break;
          default:
            cell_pass<8>(mode, in, b0, b1);
        }
    });
  }

  void
  ThermalOperator::run_faces(const double *T) const
  {
    pool_->for_range(n_face_batches_, batch_grain, [&](std::size_t b0, std::size_t b1) {
      switch (n_lanes_)
        {
          case 1:
            face_pass<1>(T, b0, b1);
            break;
          case 2:
            face_pass<2>(T, b0, b1);
            break;
          case 4:
            face_pass<4>(T, b0, b1);
            break;
          default:
            face_pass<8>(T, b0, b1);
        }
    });
  }

  void
  ThermalOperator::clear_face_slots() const
  {
    std::fill(slots_.begin() + 8 * forest_->n_active_cells(), slots_.end(), 0.0);
  }

  NodalField
  ThermalOperator::evaluate_parts(const NodalField &T,
                                  const HistoryField &history,
                                  const BeamState &beam,
                                  bool volume,
                                  bool diffusion,
                                  bool faces) const
  {
    check_epochs(T);
    check_epochs(history);
    Inputs in;
    in.u         = T.values.data();
    in.history   = &history;
    in.beam      = &beam;
    in.diffusion = diffusion;
    in.source    = volume;
    if (volume || diffusion)
      run_cells(Mode::rhs, in);
    else
      std::fill(slots_.begin(), slots_.begin() + 8 * forest_->n_active_cells(), 0.0);
    if (faces)
      run_faces(T.values.data());
    else
      clear_face_slots();

    NodalField  f    = make_field(*forest_, 0.0);
    const auto &dofs = forest_->dofs();
    pool_->for_range(n_dofs(), dof_grain, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        if (!dofs.is_dirichlet[i] && !dofs.is_constrained(i))
          f[i] = pull(i);
    });
    return f;
  }

  NodalField
  ThermalOperator::evaluate_rhs(const NodalField &T, const HistoryField &history, const BeamState &beam) const
  {
    return evaluate_parts(T, history, beam, true, true, true);
  }

  NodalField
  ThermalOperator::apply_jacobian(const NodalField &dT,
                                  const NodalField &T_lin,
                                  const HistoryField &history,
                                  double dt) const
  {
    check_epochs(dT);
    check_epochs(T_lin);
    check_epochs(history);
    const auto w = prepared(dT, true);
    Inputs     in;
    in.u       = T_lin.values.data();
    in.w       = w.data();
    in.history = &history;
    in.dt      = dt;
    run_cells(Mode::jacobian, in);
    clear_face_slots();
    NodalField  y    = make_field(*forest_, 0.0);
    const auto &dofs = forest_->dofs();
    pool_->for_range(n_dofs(), dof_grain, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        {
          if (dofs.is_constrained(i))
            continue;
          y[i] = dofs.is_dirichlet[i] ? lumped_[i] / dt * dT[i] : pull(i);
        }
    });
    return y;
  }

  NodalField
  ThermalOperator::implicit_residual(const NodalField &T,
                                     const NodalField &T_n,
                                     const NodalField &f_fixed,
                                     const HistoryField &history,
                                     double dt) const
  {
    check_epochs(T);
    check_epochs(T_n);
    check_epochs(f_fixed);
    check_epochs(history);
    std::vector<double> diff(n_dofs());
    for (std::size_t i = 0; i < diff.size(); ++i)
      diff[i] = T[i] - T_n[i];
    Inputs in;
    in.u       = T.values.data();
    in.w       = diff.data();
    in.history = &history;
    in.dt      = dt;
    run_cells(Mode::residual, in);
    clear_face_slots();
    NodalField  r    = make_field(*forest_, 0.0);
    const auto &dofs = forest_->dofs();
    pool_->for_range(n_dofs(), dof_grain, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        if (!dofs.is_dirichlet[i] && !dofs.is_constrained(i))
          r[i] = pull(i) - f_fixed[i];
    });
    return r;
  }

  NodalField
  ThermalOperator::jacobian_diagonal(const NodalField &T_lin, const HistoryField &history, double dt) const
  {
    check_epochs(T_lin);
    check_epochs(history);
    Inputs in;
    in.u       = T_lin.values.data();
    in.history = &history;
    in.dt      = dt;
    run_cells(Mode::diagonal, in);
    clear_face_slots();
    NodalField  d    = make_field(*forest_, 0.0);
    const auto &dofs = forest_->dofs();
    for (std::size_t i = 0; i < n_dofs(); ++i)
      {
        if (dofs.is_constrained(i))
          continue;
        d[i] = dofs.is_dirichlet[i] ? lumped_[i] / dt : pull(i, true);
      }
    return d;
  }

  NodalField
  ThermalOperator::apply_frozen_stiffness(const NodalField &v) const
  {
    check_epochs(v);
    const auto u = prepared(v, true);
    Inputs     in;
    in.u = u.data();
    run_cells(Mode::frozen, in);
    clear_face_slots();
    NodalField  y    = make_field(*forest_, 0.0);
    const auto &dofs = forest_->dofs();
    pool_->for_range(n_dofs(), dof_grain, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        if (!dofs.is_dirichlet[i] && !dofs.is_constrained(i))
          y[i] = pull(i);
    });
    return y;
  }

  NodalField
  ThermalOperator::explicit_fused_step(const NodalField &T_n,
                                       HistoryField &history,
                                       const BeamState &beam,
                                       double dt) const
  {
    check_epochs(T_n);
    check_epochs(history);
    Inputs in;
    in.u       = T_n.values.data();
    in.history = &history;
    in.beam    = &beam;
    run_cells(Mode::rhs, in);
    run_faces(T_n.values.data());

    NodalField   T    = make_field(*forest_, 0.0);
    const auto  &dofs = forest_->dofs();
    const double Tinf = params_.boundary.T_ambient;
    pool_->for_range(n_dofs(), dof_grain, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        {
          if (dofs.is_dirichlet[i])
            T[i] = Tinf;
          else if (!dofs.is_constrained(i))
            T[i] = T_n[i] + dt * inv_lumped_[i] * pull(i);
        }
    });
    close_constraints(*forest_, T);
    update_history(T, history);
    return T;
  }

  void
  ThermalOperator::update_history(const NodalField &T, HistoryField &history) const
  {
    check_epochs(T);
    check_epochs(history);
    pool_->for_range(n_batches_, batch_grain, [&](std::size_t b0, std::size_t b1) {
      switch (n_lanes_)
        {
          case 1:
            history_pass<1>(T.values.data(), &history, nullptr, b0, b1);
            break;
          case 2:
            history_pass<2>(T.values.data(), &history, nullptr, b0, b1);
            break;
          case 4:
            history_pass<4>(T.values.data(), &history, nullptr, b0, b1);
            break;
          default:
            history_pass<8>(T.values.data(), &history, nullptr, b0, b1);
        }
    });
  }

  std::vector<double>
  ThermalOperator::quadrature_values(const NodalField &T) const
  {
    check_epochs(T);
    std::vector<double> q(8 * forest_->n_active_cells());
    pool_->for_range(n_batches_, batch_grain, [&](std::size_t b0, std::size_t b1) {
      switch (n_lanes_)
        {
          case 1:
            history_pass<1>(T.values.data(), nullptr, &q, b0, b1);
            break;
          case 2:
            history_pass<2>(T.values.data(), nullptr, &q, b0, b1);
            break;
          case 4:
            history_pass<4>(T.values.data(), nullptr, &q, b0, b1);
            break;
          default:
            history_pass<8>(T.values.data(), nullptr, &q, b0, b1);
        }
    });
    return q;
  }

  double
  ThermalOperator::enthalpy(const NodalField &T) const
  {
    check_epochs(T);
    return blocked_sum(*pool_, n_dofs(), [&](std::size_t i0, std::size_t i1) {
      double s = 0.0;
      for (std::size_t i = i0; i < i1; ++i)
        s += lumped_[i] * T[i];
      return s;
    });
  }
} // namespace pbf
