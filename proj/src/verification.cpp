#include <pbf/errors.hpp>
#include <pbf/verification.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <chrono>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

namespace pbf::verify
{
  std::vector<double>
  DenseMatrix::apply(const std::vector<double> &x) const
  {
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        y[i] += a[i * n + j] * x[j];
    return y;
  }

  double
  DenseMatrix::asymmetry() const
  {
    double mx = 0.0, d = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        {
          mx = std::max(mx, std::abs(a[i * n + j]));
          d  = std::max(d, std::abs(a[i * n + j] - a[j * n + i]));
        }
    return mx > 0.0 ? d / mx : 0.0;
  }

  MaterialReference
  scalar_material_reference(double T, double r_c, const MaterialParams &p)
  {
    double g;
    if (T < p.T_solidus)
      g = 0.0;
    else if (T > p.T_liquidus)
      g = 1.0;
    else
      g = (T - p.T_solidus) / (p.T_liquidus - p.T_solidus);
    const double r_p = 1.0 - r_c;
    double       r_s = r_c - g;
    if (r_s < 0.0 && r_s >= -1e-14)
      r_s = 0.0;
    const double k  = r_p * p.k_powder + g * p.k_melt + r_s * p.k_solid;
    double       dk = 0.0;
    if (T > p.T_solidus && T < p.T_liquidus)
      dk = (p.k_melt - p.k_solid) / (p.T_liquidus - p.T_solidus);
    return {g, k, dk};
  }

  namespace
  {
    const double gp[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};

    double
    hat(int bit, double x)
    {
      return bit ? x : 1.0 - x;
    }
    double
    dhat(int bit)
    {
      return bit ? 1.0 : -1.0;
    }

    double
    radiation(double T, const BoundaryParams &bp)
    {
      return bp.emissivity * bp.stefan_boltzmann * (std::pow(T, 4) - std::pow(bp.T_ambient, 4));
    }

    double
    evaporation(double T, const BoundaryParams &bp, double c)
    {
      const double Tc = std::min(T, bp.T_boiling + bp.T_max_offset);
      if (!(Tc > bp.T_boiling))
        return 0.0;
      const double m = 0.82 * bp.C_P * std::exp(-bp.C_T * (1.0 / Tc - 1.0 / bp.T_boiling)) * std::sqrt(bp.C_M / Tc);
      return m * (bp.h_v + c * (Tc - bp.T_h0));
    }

    double
    gaussian_source(const Point3 &x, const BeamState &b, const HeatSourceParams &hs)
    {
      if (!b.active)
        return 0.0;
      if (x.z < b.position.z - hs.h_powder || x.z > b.position.z)
        return 0.0;
      const double r2 = (x.x - b.position.x) * (x.x - b.position.x) + (x.y - b.position.y) * (x.y - b.position.y);
      return 2.0 * b.power / (M_PI * hs.radius * hs.radius * hs.h_powder) * std::exp(-2.0 * r2 / (hs.radius * hs.radius));
    }

    struct Geo
    {
      Point3 lo;
      double h;
    };

    bool
    inside_closed(const Geo &g, const Point3 &p, double tol)
    {
      return p.x >= g.lo.x - tol && p.x <= g.lo.x + g.h + tol && p.y >= g.lo.y - tol && p.y <= g.lo.y + g.h + tol &&
             p.z >= g.lo.z - tol && p.z <= g.lo.z + g.h + tol;
    }
    bool
    inside_open(const Geo &g, const Point3 &p)
    {
      return p.x > g.lo.x && p.x < g.lo.x + g.h && p.y > g.lo.y && p.y < g.lo.y + g.h && p.z > g.lo.z &&
             p.z < g.lo.z + g.h;
    }
  } // namespace

  std::vector<double>
  DenseSystem::jacobian_apply(const std::vector<double> &dT, double dt) const
  {
    std::vector<double> x = dT;
    for (std::size_t i = 0; i < n; ++i)
      if (dirichlet[i])
        x[i] = 0.0;
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      {
        if (constrained[i])
          continue;
        if (dirichlet[i])
          {
            y[i] = lumped[i] / dt * dT[i];
            continue;
          }
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          s += (capacity(i, j) / dt + tangent(i, j)) * x[j];
        y[i] = s;
      }
    return y;
  }

  DenseSystem
  dense_assemble(const Forest &forest,
                 const NodalField &T,
                 const HistoryField &history,
                 const PhysicsParams &params,
                 const BeamState &beam)
  {
    const auto       &dm = forest.dofs();
    const std::size_t n  = dm.n_dofs();
    if (n > dense_dof_limit)
      throw SizeGuardError("dense oracle limited to " + std::to_string(dense_dof_limit) + " DoFs, got " +
                           std::to_string(n));
    const std::size_t nc = forest.n_active_cells();
    const double      tol = 1e-9 * forest.h_fine();

    std::vector<Geo> geo(nc);
    for (std::size_t k = 0; k < nc; ++k)
      geo[k] = {forest.to_physical(forest.active_cell(k).anchor), forest.cell_edge(forest.active_cell(k).level)};
    std::vector<Point3> pos(n);
    for (std::size_t i = 0; i < n; ++i)
      pos[i] = forest.to_physical(dm.dof_position[i]);

    // every vertex lying on the closure of an active cell without being
    // one of its corners is interpolated from that cell
    DenseSystem s;
    s.n = n;
    s.masters.assign(n, {});
    s.constrained.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < nc; ++k)
        {
          if (!inside_closed(geo[k], pos[i], tol))
            continue;
          const double xi[3] = {(pos[i].x - geo[k].lo.x) / geo[k].h, (pos[i].y - geo[k].lo.y) / geo[k].h,
                                (pos[i].z - geo[k].lo.z) / geo[k].h};
          bool corner = true;
          for (double v : xi)
            corner = corner && (std::abs(v) < 1e-9 || std::abs(v - 1.0) < 1e-9);
          if (corner)
            continue;
          for (int a = 0; a < 8; ++a)
            {
              const double w = hat(a & 1, xi[0]) * hat((a >> 1) & 1, xi[1]) * hat((a >> 2) & 1, xi[2]);
              if (std::abs(w) > 1e-12)
                s.masters[i].emplace_back(dm.cell_dofs[k][a], w);
            }
          s.constrained[i] = 1;
          break;
        }
    for (int pass = 0; pass < 8; ++pass)
      for (std::size_t i = 0; i < n; ++i)
        {
          if (!s.constrained[i])
            continue;
          std::map<std::size_t, double> e;
          for (auto [m, w] : s.masters[i])
            {
              if (s.constrained[m])
                for (auto [mm, ww] : s.masters[m])
                  e[mm] += w * ww;
              else
                e[m] += w;
            }
          s.masters[i].assign(e.begin(), e.end());
        }
    s.dirichlet.assign(n, 0);
    if (forest.params().dirichlet_bottom)
      for (std::size_t i = 0; i < n; ++i)
        if (!s.constrained[i] && std::abs(pos[i].z - forest.origin().z) < tol)
          s.dirichlet[i] = 1;

    // unconstrained element assembly
    DenseMatrix Cu(n), Ku(n), Lu(n);
    std::vector<double> src(n, 0.0), bnd(n, 0.0);
    const auto &mp = params.material;
    const double rc = mp.density * mp.specific_heat;
    for (std::size_t k = 0; k < nc; ++k)
      {
        const double h = geo[k].h;
        const auto  &cd = dm.cell_dofs[k];
        for (int qz = 0; qz < 2; ++qz)
          for (int qy = 0; qy < 2; ++qy)
            for (int qx = 0; qx < 2; ++qx)
              {
                const double xi[3] = {gp[qx], gp[qy], gp[qz]};
                const int    q     = qx + 2 * qy + 4 * qz;
                const double JxW   = h * h * h / 8.0;
                double       N[8], G[8][3];
                for (int a = 0; a < 8; ++a)
                  {
                    const int b[3] = {a & 1, (a >> 1) & 1, (a >> 2) & 1};
                    N[a]           = hat(b[0], xi[0]) * hat(b[1], xi[1]) * hat(b[2], xi[2]);
                    G[a][0]        = dhat(b[0]) * hat(b[1], xi[1]) * hat(b[2], xi[2]) / h;
                    G[a][1]        = hat(b[0], xi[0]) * dhat(b[1]) * hat(b[2], xi[2]) / h;
                    G[a][2]        = hat(b[0], xi[0]) * hat(b[1], xi[1]) * dhat(b[2]) / h;
                  }
                double Tq = 0.0, gT[3] = {0, 0, 0};
                for (int a = 0; a < 8; ++a)
                  {
                    Tq += N[a] * T[cd[a]];
                    for (int d = 0; d < 3; ++d)
                      gT[d] += G[a][d] * T[cd[a]];
                  }
                const auto   m   = scalar_material_reference(Tq, history.r_c[8 * k + q], mp);
                const Point3 x   = {geo[k].lo.x + h * xi[0], geo[k].lo.y + h * xi[1], geo[k].lo.z + h * xi[2]};
                const double qv  = gaussian_source(x, beam, params.source);
                for (int a = 0; a < 8; ++a)
                  {
                    src[cd[a]] += JxW * qv * N[a];
                    for (int b = 0; b < 8; ++b)
                      {
                        const double gg = G[a][0] * G[b][0] + G[a][1] * G[b][1] + G[a][2] * G[b][2];
                        const double gl = G[a][0] * gT[0] + G[a][1] * gT[1] + G[a][2] * gT[2];
                        Cu(cd[a], cd[b]) += JxW * rc * N[a] * N[b];
                        Ku(cd[a], cd[b]) += JxW * m.k * gg;
                        Lu(cd[a], cd[b]) += JxW * m.dk * N[b] * gl;
                      }
                  }
              }
      }

    // exposed faces: sample points just outside the face
    for (std::size_t k = 0; k < nc; ++k)
      for (int dir = 0; dir < 6; ++dir)
        {
          const int    axis = dir / 2, side = dir % 2;
          const double h    = geo[k].h;
          int          n_void = 0, n_out = 0;
          for (int sidx = 0; sidx < 4; ++sidx)
            {
              double p[3] = {geo[k].lo.x, geo[k].lo.y, geo[k].lo.z};
              int    t    = 0;
              for (int d = 0; d < 3; ++d)
                {
                  if (d == axis)
                    p[d] += side ? h + 0.25 * forest.h_fine() : -0.25 * forest.h_fine();
                  else
                    p[d] += (((sidx >> t++) & 1) ? 0.75 : 0.25) * h;
                }
              const Point3 pt{p[0], p[1], p[2]};
              bool         active_here = false;
              for (std::size_t j = 0; j < nc && !active_here; ++j)
                active_here = inside_open(geo[j], pt);
              if (active_here)
                continue;
              bool in_domain = false;
              for (const auto &c : forest.cells())
                {
                  const Geo g{forest.to_physical(c.anchor), forest.cell_edge(c.level)};
                  if (inside_open(g, pt))
                    {
                      in_domain = true;
                      break;
                    }
                }
              in_domain ? ++n_void : ++n_out;
            }
          const bool exposed = n_void == 4 || (n_out == 4 && dir == 5);
          if (!exposed)
            continue;
          const auto &cd = dm.cell_dofs[k];
          for (int qv = 0; qv < 2; ++qv)
            for (int qu = 0; qu < 2; ++qu)
              {
                double xi[3];
                int    t = 0;
                for (int d = 0; d < 3; ++d)
                  xi[d] = d == axis ? double(side) : (t++ == 0 ? gp[qu] : gp[qv]);
                double N[8], Tq = 0.0;
                for (int a = 0; a < 8; ++a)
                  {
                    N[a] = hat(a & 1, xi[0]) * hat((a >> 1) & 1, xi[1]) * hat((a >> 2) & 1, xi[2]);
                    Tq += N[a] * T[cd[a]];
                  }
                double qn = 0.0;
                if (params.boundary.radiation)
                  qn += radiation(Tq, params.boundary);
                if (params.boundary.evaporation)
                  qn += evaporation(Tq, params.boundary, mp.specific_heat);
                for (int a = 0; a < 8; ++a)
                  bnd[cd[a]] -= h * h / 4.0 * qn * N[a];
              }
        }

    // condensation P^T A P
    auto Pcols = [&](std::size_t j) {
      std::vector<std::pair<std::size_t, double>> r;
      if (s.constrained[j])
        return s.masters[j];
      r.emplace_back(j, 1.0);
      return r;
    };
    auto condense = [&](const DenseMatrix &A) {
      DenseMatrix AP(n), out(n);
      for (std::size_t j = 0; j < n; ++j)
        for (auto [c, w] : Pcols(j))
          for (std::size_t r = 0; r < n; ++r)
            AP(r, c) += A(r, j) * w;
      for (std::size_t j = 0; j < n; ++j)
        for (auto [c, w] : Pcols(j))
          for (std::size_t col = 0; col < n; ++col)
            out(c, col) += w * AP(j, col);
      return out;
    };
    auto condense_vec = [&](const std::vector<double> &v) {
      std::vector<double> out(n, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        for (auto [c, w] : Pcols(j))
          out[c] += w * v[j];
      return out;
    };

    // tangent of K(T) T: K + L
    DenseMatrix KLu(n);
    for (std::size_t i = 0; i < n * n; ++i)
      KLu.a[i] = Ku.a[i] + Lu.a[i];
    s.capacity  = condense(Cu);
    s.stiffness = condense(Ku);
    s.tangent   = condense(KLu);
    s.source    = condense_vec(src);
    s.boundary  = condense_vec(bnd);

    // -K T with the closed temperature vector
    std::vector<double> KT = Ku.apply(T.values);
    std::vector<double> full(n);
    for (std::size_t i = 0; i < n; ++i)
      full[i] = -KT[i] + src[i] + bnd[i];
    s.rhs = condense_vec(full);
    for (std::size_t i = 0; i < n; ++i)
      if (s.dirichlet[i])
        s.rhs[i] = 0.0;
    s.lumped.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        s.lumped[i] += s.capacity(i, j);
    return s;
  }

  std::size_t
  connectivity_check(const std::vector<VoxelBox> &cells)
  {
    std::vector<std::size_t> parent(cells.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
      while (parent[x] != x)
        x = parent[x] = parent[parent[x]];
      return x;
    };
    std::unordered_map<std::uint64_t, std::size_t> owner;
    auto key = [](Coord x, Coord y, Coord z) {
      return std::uint64_t(x + 1) << 42 | std::uint64_t(y + 1) << 21 | std::uint64_t(z + 1);
    };
    for (std::size_t c = 0; c < cells.size(); ++c)
      for (Coord z = 0; z < cells[c].size; ++z)
        for (Coord y = 0; y < cells[c].size; ++y)
          for (Coord x = 0; x < cells[c].size; ++x)
            owner[key(cells[c].anchor.x + x, cells[c].anchor.y + y, cells[c].anchor.z + z)] = c;
    for (const auto &[k, c] : owner)
      {
        const Coord x = Coord(k >> 42) - 1, y = Coord((k >> 21) & 0x1fffff) - 1, z = Coord(k & 0x1fffff) - 1;
        const Coord nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
        for (const auto &p : nb)
          if (auto it = owner.find(key(p[0], p[1], p[2])); it != owner.end())
            parent[find(c)] = find(it->second);
      }
    std::size_t n = 0;
    for (std::size_t c = 0; c < cells.size(); ++c)
      n += find(c) == c;
    return n;
  }

  std::vector<VoxelBox>
  consolidated_cells(const Forest &forest, const HistoryField &history, double threshold, bool skip_base)
  {
    std::vector<VoxelBox> out;
    for (std::size_t k = 0; k < forest.n_active_cells(); ++k)
      {
        const Cell &c = forest.active_cell(k);
        if (skip_base && c.initially_consolidated)
          continue;
        double m = 0.0;
        for (int q = 0; q < 8; ++q)
          m += history.r_c[8 * k + q];
        if (m / 8.0 >= threshold)
          out.push_back({c.anchor, forest.cell_size(c.level)});
      }
    return out;
  }
} // namespace pbf::verify

namespace pbf::verify
{
  namespace
  {
    Box
    box(double x0, double y0, double z0, double x1, double y1, double z1)
    {
      return {{x0, y0, z0}, {x1, y1, z1}};
    }

    OracleMesh
    make(const std::string &name, const PartGeometry &g, const MeshParams &p, int layers)
    {
      OracleMesh m{name, build_coarse_grid(g, p), {}};
      m.history = initial_history(m.forest);
      for (int k = 0; k < layers; ++k)
        {
          const auto plan = advance_layer(m.forest, m.history);
          auto       r    = apply_update(m.forest, plan, {make_field(m.forest, 303.0)}, m.history, 303.0);
          m.forest        = std::move(r.forest);
          m.history       = std::move(r.history);
        }
      return m;
    }
  } // namespace

  std::vector<OracleMesh>
  oracle_meshes()
  {
    std::vector<OracleMesh> out;
    {
      PartGeometry g;
      g.base_plate = box(0, 0, 0, 40e-6, 40e-6, 40e-6);
      g.chamber    = box(0, 0, 40e-6, 40e-6, 40e-6, 80e-6);
      out.push_back(make("single cell", g, {}, 0));
    }
    {
      PartGeometry g;
      g.base_plate = box(0, 0, 0, 80e-6, 80e-6, 80e-6);
      g.chamber    = box(0, 0, 80e-6, 80e-6, 80e-6, 160e-6);
      MeshParams p;
      p.dirichlet_bottom = false;
      out.push_back(make("free-bottom block", g, p, 1));
    }
    {
      // coarse plate below a refined band
      PartGeometry g;
      g.base_plate = box(0, 0, 0, 0.32e-3, 0.16e-3, 0.24e-3);
      g.chamber    = box(0, 0, 0.24e-3, 0.32e-3, 0.16e-3, 0.32e-3);
      MeshParams p;
      p.n_refine     = 1;
      p.h_coarse     = 80e-6;
      p.d_haz_layers = 1;
      out.push_back(make("hanging chamber", g, p, 1));
    }
    {
      // second layer narrower than the first
      PartGeometry g;
      g.mode       = GeometryMode::boundary_fitted;
      g.base_plate = box(0, 0, 0, 0.16e-3, 0.08e-3, 0.04e-3);
      g.part       = {box(0, 0, 0.04e-3, 0.16e-3, 0.08e-3, 0.08e-3), box(0, 0, 0.08e-3, 0.08e-3, 0.08e-3, 0.12e-3)};
      out.push_back(make("fitted step", g, {}, 2));
    }
    {
      // HAZ ending inside the plate
      PartGeometry g;
      g.base_plate = box(0, 0, 0, 0.32e-3, 0.16e-3, 0.32e-3);
      g.chamber    = box(0, 0, 0.32e-3, 0.32e-3, 0.16e-3, 0.48e-3);
      MeshParams p;
      p.n_refine     = 2;
      p.h_coarse     = 160e-6;
      p.d_haz_layers = 1;
      out.push_back(make("two-level chamber", g, p, 1));
    }
    return out;
  }

  double
  relative_deviation(const std::vector<double> &a, const std::vector<double> &b)
  {
    double d = 0.0, m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      {
        d = std::max(d, std::abs(a[i] - b[i]));
        m = std::max(m, std::abs(b[i]));
      }
    return m > 0.0 ? d / m : d;
  }

  std::vector<OracleCheck>
  oracle_report(int trials, std::uint64_t seed, int n_lanes)
  {
    std::mt19937_64                        rng(seed);
    std::uniform_real_distribution<double> uT(300.0, 3600.0), ur(0.0, 1.0), ud(-1.0, 1.0);
    PhysicsParams                          pp;
    pp.material.k_melt = 30.0; // distinct phase conductivities exercise dk/dT
    std::vector<OracleCheck> out;
    for (auto &m : oracle_meshes())
      {
        const auto      t0 = std::chrono::steady_clock::now();
        ThermalOperator op(m.forest, pp, n_lanes);
        OracleCheck     c;
        c.name   = m.name;
        c.n_dofs = m.forest.dofs().n_dofs();
        c.trials = trials;
        BeamState   beam;
        const auto &top = m.forest.active_cell(m.forest.n_active_cells() - 1);
        const auto  lo  = m.forest.to_physical(top.anchor);
        beam.position   = {lo.x + 10e-6, lo.y + 5e-6, lo.z + m.forest.cell_edge(top.level)};
        beam.power      = 100.0;
        beam.active     = true;
        NodalField   T  = make_field(m.forest, 0.0);
        HistoryField h  = m.history;
        NodalField   dT = make_field(m.forest, 0.0);
        for (int t = 0; t < trials; ++t)
          {
            for (auto &v : T.values)
              v = uT(rng);
            close_constraints(m.forest, T);
            for (auto &r : h.r_c)
              r = ur(rng);
            for (auto &v : dT.values)
              v = ud(rng);
            close_constraints(m.forest, dT);
            const double dt  = 1e-4;
            const auto   ref = dense_assemble(m.forest, T, h, pp, beam);
            c.rhs            = std::max(c.rhs, relative_deviation(op.evaluate_rhs(T, h, beam).values, ref.rhs));
            c.lumped         = std::max(c.lumped, relative_deviation(op.lumped_capacity().values, ref.lumped));
            c.jacobian =
              std::max(c.jacobian, relative_deviation(op.apply_jacobian(dT, T, h, dt).values, ref.jacobian_apply(dT.values, dt)));
          }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(c);
      }
    return out;
  }
} // namespace pbf::verify

namespace pbf::verify
{
  double
  trace_deviation(const Trace &a, const Trace &b, int phase_lo, int phase_hi)
  {
    double      d = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < a.time.size(); ++i)
      {
        if (a.phase[i] < phase_lo || a.phase[i] > phase_hi)
          continue;
        const double t = a.time[i];
        while (j + 1 < b.time.size() && b.time[j + 1] <= t)
          ++j;
        double v;
        if (t <= b.time.front())
          v = b.value.front();
        else if (j + 1 >= b.time.size())
          v = b.value.back();
        else
          {
            const double w = (t - b.time[j]) / (b.time[j + 1] - b.time[j]);
            v              = (1.0 - w) * b.value[j] + w * b.value[j + 1];
          }
        d = std::max(d, std::abs(a.value[i] - v));
      }
    return d;
  }

  ConvergenceStudy
  convergence_study(const std::vector<int> &refinements, int threads, double power)
  {
    const auto       t0 = std::chrono::steady_clock::now();
    ConvergenceStudy s;
    s.refinements = refinements;
    for (int r : refinements)
      s.traces.push_back(run_convergence_scenario(convergence_scenario(r, power), threads));
    for (std::size_t i = 0; i + 1 < s.traces.size(); ++i)
      {
        s.differences.push_back(trace_deviation(s.traces[i], s.traces[i + 1]));
        s.cooldown_differences.push_back(trace_deviation(s.traces[i], s.traces[i + 1], 1, 2));
      }
    if (s.differences.size() >= 2 && s.differences[0] > 0.0)
      s.contraction = s.differences[1] / s.differences[0];
    auto all_explicit = [&](int r) {
      auto c                               = convergence_scenario(r, power);
      c.settings.explicit_cooldown_steps = std::numeric_limits<int>::max();
      return run_convergence_scenario(c, threads);
    };
    if (!refinements.empty())
      {
        s.switch_deviation = trace_deviation(s.traces.front(), all_explicit(refinements.front()));
        s.switch_deviation_finest =
          refinements.size() > 1 ? trace_deviation(s.traces.back(), all_explicit(refinements.back())) : s.switch_deviation;
      }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
  }
} // namespace pbf::verify
