#include <pbf/errors.hpp>
#include <pbf/mesh_forest.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <string>

namespace pbf
{
  namespace
  {
    constexpr double gauss_lo = 0.21132486540518711775; // (1 - 1/sqrt(3)) / 2
    constexpr double gauss_hi = 0.78867513459481288225; // (1 + 1/sqrt(3)) / 2

    std::uint64_t
    morton3(const LatticePoint &p)
    {
      auto spread = [](std::uint64_t v) {
        v &= 0x1fffff;
        v = (v | v << 32) & 0x1f00000000ffffULL;
        v = (v | v << 16) & 0x1f0000ff0000ffULL;
        v = (v | v << 8) & 0x100f00f00f00f00fULL;
        v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
        v = (v | v << 2) & 0x1249249249249249ULL;
        return v;
      };
      return spread(p.x) | spread(p.y) << 1 | spread(p.z) << 2;
    }

    Coord
    floor_multiple(Coord v, Coord s)
    {
      return (v / s) * s;
    }

    LatticePoint
    offset(const LatticePoint &p, Coord dx, Coord dy, Coord dz)
    {
      return {p.x + dx, p.y + dy, p.z + dz};
    }

    // Leaf storage shared by the forest and the update planner.
    struct LeafSet
    {
      std::unordered_map<std::uint64_t, Cell> leaves;
      const std::unordered_set<std::uint64_t> *coarse = nullptr;
      int                                      max_level = 0;

      Coord
      size(int level) const
      {
        return Coord(1) << (max_level - level);
      }

      bool
      in_domain(const LatticePoint &v) const
      {
        if (v.x < 0 || v.y < 0 || v.z < 0)
          return false;
        const Coord s = size(0);
        return coarse->count(cell_key(0, {floor_multiple(v.x, s), floor_multiple(v.y, s), floor_multiple(v.z, s)})) > 0;
      }

      const Cell *
      containing(const LatticePoint &v) const
      {
        if (!in_domain(v))
          return nullptr;
        for (int l = 0; l <= max_level; ++l)
          {
            const Coord s  = size(l);
            auto        it = leaves.find(cell_key(l, {floor_multiple(v.x, s), floor_multiple(v.y, s), floor_multiple(v.z, s)}));
            if (it != leaves.end())
              return &it->second;
          }
        return nullptr;
      }
    };

    int
    layer_of_top(Coord top, Coord base_top, Coord layer_cells)
    {
      if (top <= base_top)
        return -1;
      return int((top - base_top - 1) / layer_cells);
    }

    Coord
    to_lattice(double v, double o, double h, const char *what)
    {
      const double q = (v - o) / h;
      const double r = std::round(q);
      if (std::abs(q - r) > 1e-6)
        throw ConfigError(std::string(what) + " is not aligned with the finest mesh lattice");
      return Coord(r);
    }
  } // namespace

  std::uint64_t
  cell_key(int level, const LatticePoint &a)
  {
    return std::uint64_t(level) << 60 | std::uint64_t(a.x) << 40 | std::uint64_t(a.y) << 20 | std::uint64_t(a.z);
  }

  std::uint64_t
  vertex_key(const LatticePoint &p)
  {
    return std::uint64_t(p.x) << 42 | std::uint64_t(p.y) << 21 | std::uint64_t(p.z);
  }

  void
  MeshParams::validate() const
  {
    if (!(h_powder > 0.0))
      throw ConfigError("mesh.h_powder must be positive");
    if (n_refine < 0 || n_refine > 12)
      throw ConfigError("mesh.n_refine must be in [0, 12]");
    if (extra_refinement < 0 || extra_refinement > 4)
      throw ConfigError("mesh.extra_refinement must be in [0, 4]");
    const double expected = std::ldexp(h_powder, n_refine);
    if (std::abs(h_coarse - expected) > 1e-9 * expected)
      throw ConfigError("mesh.h_coarse must equal 2^n_refine * h_powder (" + std::to_string(expected) + " m)");
    if (d_haz_layers < 0.0)
      throw ConfigError("mesh.d_haz must be non-negative");
    if (!(r_coarsen > 0.0 && r_coarsen <= 1.0))
      throw ConfigError("mesh.r_coarsen must be in (0, 1]");
  }

  bool
  Forest::in_domain(const LatticePoint &v) const
  {
    if (v.x < 0 || v.y < 0 || v.z < 0)
      return false;
    const Coord s = cell_size(0);
    return coarse_cells_.count(cell_key(0, {floor_multiple(v.x, s), floor_multiple(v.y, s), floor_multiple(v.z, s)})) > 0;
  }

  std::optional<std::uint32_t>
  Forest::find_leaf(int level, const LatticePoint &anchor) const
  {
    auto it = leaf_of_key_.find(cell_key(level, anchor));
    if (it == leaf_of_key_.end())
      return std::nullopt;
    return it->second;
  }

  std::optional<std::uint32_t>
  Forest::leaf_containing(const LatticePoint &v) const
  {
    if (!in_domain(v))
      return std::nullopt;
    for (int l = 0; l <= max_level_; ++l)
      {
        const Coord s = cell_size(l);
        if (auto f = find_leaf(l, {floor_multiple(v.x, s), floor_multiple(v.y, s), floor_multiple(v.z, s)}))
          return f;
      }
    return std::nullopt;
  }

  std::optional<std::uint32_t>
  Forest::locate_active(const Point3 &x) const
  {
    const double q[3] = {(x.x - origin_.x) / h_fine_, (x.y - origin_.y) / h_fine_, (x.z - origin_.z) / h_fine_};
    Coord        lo[3], hi[3];
    for (int d = 0; d < 3; ++d)
      {
        const double r = std::round(q[d]);
        if (std::abs(q[d] - r) < 1e-9)
          {
            lo[d] = Coord(r) - 1;
            hi[d] = Coord(r);
          }
        else
          lo[d] = hi[d] = Coord(std::floor(q[d]));
      }
    for (Coord z = lo[2]; z <= hi[2]; ++z)
      for (Coord y = lo[1]; y <= hi[1]; ++y)
        for (Coord xx = lo[0]; xx <= hi[0]; ++xx)
          if (auto leaf = leaf_containing({xx, y, z}); leaf && active_index_[*leaf] >= 0)
            return std::uint32_t(active_index_[*leaf]);
    return std::nullopt;
  }

  double
  Forest::active_volume() const
  {
    double v = 0.0;
    for (auto c : active_cells_)
      {
        const double h = cell_edge(cells_[c].level);
        v += h * h * h;
      }
    return v;
  }

  std::optional<std::pair<std::uint32_t, std::uint32_t>>
  Forest::find_balance_violation() const
  {
    for (std::uint32_t i = 0; i < cells_.size(); ++i)
      {
        const Cell &c = cells_[i];
        const Coord s = cell_size(c.level);
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              {
                if (dx == 0 && dy == 0 && dz == 0)
                  continue;
                auto n = leaf_containing(offset(c.anchor, dx * s, dy * s, dz * s));
                if (n && cells_[*n].level < c.level - 1)
                  return std::make_pair(i, *n);
              }
      }
    return std::nullopt;
  }

  void
  Forest::finalize(std::vector<Cell> leaves)
  {
    std::sort(leaves.begin(), leaves.end(), [](const Cell &a, const Cell &b) {
      return morton3(a.anchor) < morton3(b.anchor);
    });
    cells_ = std::move(leaves);
    leaf_of_key_.clear();
    leaf_of_key_.reserve(cells_.size() * 2);
    active_cells_.clear();
    active_index_.assign(cells_.size(), -1);
    for (std::uint32_t i = 0; i < cells_.size(); ++i)
      {
        leaf_of_key_[cell_key(cells_[i].level, cells_[i].anchor)] = i;
        if (cells_[i].is_active())
          {
            active_index_[i] = std::int32_t(active_cells_.size());
            active_cells_.push_back(i);
          }
      }
    build_dofs();
    build_faces();
  }

  void
  Forest::build_dofs()
  {
    DofMap d;
    std::vector<LatticePoint>                   points;
    std::unordered_map<std::uint64_t, std::uint32_t> seen;
    seen.reserve(active_cells_.size() * 3);
    for (auto ci : active_cells_)
      {
        const Cell &c = cells_[ci];
        const Coord s = cell_size(c.level);
        for (int a = 0; a < 8; ++a)
          {
            const LatticePoint p = offset(c.anchor, (a & 1) * s, ((a >> 1) & 1) * s, ((a >> 2) & 1) * s);
            if (seen.emplace(vertex_key(p), 0).second)
              points.push_back(p);
          }
      }
    std::sort(points.begin(), points.end(), [](const LatticePoint &a, const LatticePoint &b) {
      return std::tie(a.z, a.y, a.x) < std::tie(b.z, b.y, b.x);
    });
    d.dof_position = points;
    d.dof_of_vertex.reserve(points.size() * 2);
    for (std::uint32_t i = 0; i < points.size(); ++i)
      d.dof_of_vertex[vertex_key(points[i])] = i;

    d.cell_dofs.resize(active_cells_.size());
    for (std::size_t k = 0; k < active_cells_.size(); ++k)
      {
        const Cell &c = cells_[active_cells_[k]];
        const Coord s = cell_size(c.level);
        for (int a = 0; a < 8; ++a)
          d.cell_dofs[k][a] =
            d.dof_of_vertex.at(vertex_key(offset(c.anchor, (a & 1) * s, ((a >> 1) & 1) * s, ((a >> 2) & 1) * s)));
      }

    // hanging vertices: corner of some active leaf but not of another
    // active leaf touching it
    d.constraint_of.assign(points.size(), -1);
    for (std::uint32_t i = 0; i < points.size(); ++i)
      {
        const LatticePoint &p = points[i];
        for (int o = 0; o < 8; ++o)
          {
            const LatticePoint v = offset(p, -(o & 1), -((o >> 1) & 1), -((o >> 2) & 1));
            auto               leaf = leaf_containing(v);
            if (!leaf || active_index_[*leaf] < 0)
              continue;
            const Cell  &c = cells_[*leaf];
            const Coord  s = cell_size(c.level);
            const Coord  rel[3] = {p.x - c.anchor.x, p.y - c.anchor.y, p.z - c.anchor.z};
            bool         corner = true;
            int          mid_axes[3], n_mid = 0, fixed_bits = 0;
            for (int ax = 0; ax < 3; ++ax)
              {
                if (rel[ax] == 0)
                  continue;
                if (rel[ax] == s)
                  fixed_bits |= 1 << ax;
                else if (2 * rel[ax] == s)
                  {
                    corner             = false;
                    mid_axes[n_mid++] = ax;
                  }
                else
                  throw Error("hanging vertex off an edge midpoint or face center; mesh not 2:1 balanced");
              }
            if (corner)
              continue;
            Constraint con{i, {}};
            const double w = 1.0 / double(1 << n_mid);
            for (int m = 0; m < (1 << n_mid); ++m)
              {
                int bits = fixed_bits;
                for (int j = 0; j < n_mid; ++j)
                  if (m >> j & 1)
                    bits |= 1 << mid_axes[j];
                con.masters.emplace_back(d.cell_dofs[active_index_[*leaf]][bits], w);
              }
            d.constraint_of[i] = std::int32_t(d.constraints.size());
            d.constraints.push_back(std::move(con));
            break;
          }
      }
    // masters that are themselves constrained are expanded
    bool chained = true;
    for (int pass = 0; chained && pass < 8; ++pass)
      {
        chained = false;
        for (auto &con : d.constraints)
          {
            std::map<std::uint32_t, double> expanded;
            for (auto [m, w] : con.masters)
              {
                if (d.constraint_of[m] >= 0)
                  {
                    chained = true;
                    for (auto [mm, ww] : d.constraints[d.constraint_of[m]].masters)
                      expanded[mm] += w * ww;
                  }
                else
                  expanded[m] += w;
              }
            con.masters.assign(expanded.begin(), expanded.end());
          }
      }

    d.is_dirichlet.assign(points.size(), 0);
    if (params_.dirichlet_bottom)
      for (std::uint32_t i = 0; i < points.size(); ++i)
        if (points[i].z == 0 && d.constraint_of[i] < 0)
          {
            d.is_dirichlet[i] = 1;
            d.dirichlet_dofs.push_back(i);
          }
    dofs_ = std::move(d);
  }

  void
  Forest::build_faces()
  {
    faces_.clear();
    for (std::uint32_t k = 0; k < active_cells_.size(); ++k)
      {
        const Cell &c = cells_[active_cells_[k]];
        const Coord s = cell_size(c.level);
        for (int dir = 0; dir < 6; ++dir)
          {
            const int    axis = dir / 2;
            const Coord  sign = (dir % 2) ? 1 : -1;
            LatticePoint r    = c.anchor;
            (axis == 0 ? r.x : axis == 1 ? r.y : r.z) += sign * s;
            bool exposed = false;
            if (!in_domain(r))
              exposed = dir == 5;
            else
              {
                const Cell &n = cells_[*leaf_containing(r)];
                if (n.level <= c.level)
                  exposed = !n.is_active();
                else
                  {
                    // four half-size neighbours share the face
                    const Coord h      = s / 2;
                    int         n_void = 0;
                    for (int q = 0; q < 4; ++q)
                      {
                        LatticePoint t = r;
                        Coord *u = axis == 0 ? &t.y : &t.x;
                        Coord *v = axis == 2 ? &t.y : &t.z;
                        *u += (q & 1) * h;
                        *v += ((q >> 1) & 1) * h;
                        if (sign < 0)
                          (axis == 0 ? t.x : axis == 1 ? t.y : t.z) += h;
                        if (!cells_[*leaf_containing(t)].is_active())
                          ++n_void;
                      }
                    if (n_void != 0 && n_void != 4)
                      throw Error("face partially covered by active cells");
                    exposed = n_void == 4;
                  }
              }
            if (exposed)
              faces_.push_back({k, dir});
          }
      }
  }

  struct ForestBuilder
  {
    static Forest
    coarse(const PartGeometry &g, const MeshParams &p)
    {
      p.validate();
      Forest f;
      f.params_      = p;
      f.mode_        = g.mode;
      f.max_level_   = p.n_refine + p.extra_refinement;
      f.h_fine_      = std::ldexp(p.h_powder, -p.extra_refinement);
      f.layer_cells_ = Coord(1) << p.extra_refinement;

      std::vector<std::pair<Box, bool>> boxes{{g.base_plate, true}};
      if (g.mode == GeometryMode::build_chamber)
        boxes.emplace_back(g.chamber, false);
      else
        for (const auto &b : g.part)
          boxes.emplace_back(b, false);

      Point3 o = g.base_plate.lo;
      for (const auto &[b, base] : boxes)
        {
          if (!(b.hi.x > b.lo.x && b.hi.y > b.lo.y && b.hi.z > b.lo.z))
            throw ConfigError("geometry box with non-positive extent");
          o.x = std::min(o.x, b.lo.x);
          o.y = std::min(o.y, b.lo.y);
          if (b.lo.z < g.base_plate.lo.z)
            throw ConfigError("geometry extends below the base plate");
        }
      f.origin_ = o;

      const Coord S = f.cell_size(0);
      f.base_top_   = to_lattice(g.base_plate.hi.z, o.z, f.h_fine_, "base plate top");
      if (g.mode == GeometryMode::build_chamber &&
          to_lattice(g.chamber.lo.z, o.z, f.h_fine_, "chamber bottom") != f.base_top_)
        throw ConfigError("build chamber must sit on top of the base plate");

      std::vector<Cell> cells;
      for (const auto &[b, base] : boxes)
        {
          const Coord lo[3] = {to_lattice(b.lo.x, o.x, f.h_fine_, "box corner"),
                               to_lattice(b.lo.y, o.y, f.h_fine_, "box corner"),
                               to_lattice(b.lo.z, o.z, f.h_fine_, "box corner")};
          const Coord hi[3] = {to_lattice(b.hi.x, o.x, f.h_fine_, "box corner"),
                               to_lattice(b.hi.y, o.y, f.h_fine_, "box corner"),
                               to_lattice(b.hi.z, o.z, f.h_fine_, "box corner")};
          for (int d = 0; d < 3; ++d)
            {
              if (lo[d] % S != 0 || hi[d] % S != 0)
                throw ConfigError("geometry extents must be integer multiples of h_coarse");
              if (hi[d] >= (Coord(1) << 20))
                throw ConfigError("geometry too large for the mesh lattice");
              f.extent_[d] = std::max(f.extent_[d], hi[d]);
            }
          if (!base && lo[2] < f.base_top_)
            throw ConfigError("part boxes must lie above the base plate");
          for (Coord z = lo[2]; z < hi[2]; z += S)
            for (Coord y = lo[1]; y < hi[1]; y += S)
              for (Coord x = lo[0]; x < hi[0]; x += S)
                {
                  const LatticePoint a{x, y, z};
                  if (!f.coarse_cells_.insert(cell_key(0, a)).second)
                    throw ConfigError("geometry boxes overlap");
                  Cell c;
                  c.level                  = 0;
                  c.anchor                 = a;
                  c.initially_consolidated = base;
                  c.state                  = base ? CellState::active : CellState::inactive_void;
                  c.layer_index            = base ? -1 : layer_of_top(z + S, f.base_top_, f.layer_cells_);
                  cells.push_back(c);
                }
        }
      f.current_layer_ = -1;
      f.epoch_         = 0;
      f.finalize(std::move(cells));
      return f;
    }

    static Forest
    with_cells(const Forest &old, std::vector<Cell> cells, int layer)
    {
      Forest f;
      f.params_        = old.params_;
      f.mode_          = old.mode_;
      f.origin_        = old.origin_;
      f.h_fine_        = old.h_fine_;
      f.max_level_     = old.max_level_;
      f.layer_cells_   = old.layer_cells_;
      f.base_top_      = old.base_top_;
      f.extent_        = old.extent_;
      f.coarse_cells_  = old.coarse_cells_;
      f.current_layer_ = layer;
      f.epoch_         = old.epoch_ + 1;
      f.finalize(std::move(cells));
      return f;
    }

    static const std::unordered_set<std::uint64_t> &
    coarse_set(const Forest &f)
    {
      return f.coarse_cells_;
    }
  };

  Forest
  build_coarse_grid(const PartGeometry &geometry, const MeshParams &params)
  {
    return ForestBuilder::coarse(geometry, params);
  }

  namespace
  {
    // Minimum history over all quadrature points of the old mesh inside the
    // given cell region, or -1 if part of it was inactive.
    double
    history_min_in_region(const Forest &old, const HistoryField &h, int level, const LatticePoint &a)
    {
      auto leaf = old.leaf_containing(a);
      if (!leaf)
        return -1.0;
      const Cell &o = old.cells()[*leaf];
      if (o.level <= level)
        {
          const auto ai = old.active_index_of(*leaf);
          if (ai < 0)
            return -1.0;
          return *std::min_element(h.r_c.begin() + 8 * ai, h.r_c.begin() + 8 * ai + 8);
        }
      const Coord s  = old.cell_size(level + 1);
      double      mn = 1.0;
      for (int q = 0; q < 8; ++q)
        {
          const double v = history_min_in_region(old, h, level + 1, offset(a, (q & 1) * s, ((q >> 1) & 1) * s, ((q >> 2) & 1) * s));
          if (v < 0.0)
            return -1.0;
          mn = std::min(mn, v);
        }
      return mn;
    }
  } // namespace

  MeshUpdatePlan
  advance_layer(const Forest &forest, const HistoryField &history)
  {
    if (history.epoch != forest.epoch() || history.r_c.size() != 8 * forest.n_active_cells())
      throw StaleDataError("history field does not belong to the current mesh");

    MeshUpdatePlan plan;
    plan.from_epoch = forest.epoch();
    plan.new_layer  = forest.current_layer() + 1;

    LeafSet w;
    w.coarse    = &ForestBuilder::coarse_set(forest);
    w.max_level = forest.max_level();
    for (const auto &c : forest.cells())
      w.leaves.emplace(cell_key(c.level, c.anchor), c);

    const int   L     = forest.max_level();
    const Coord zb    = forest.layer_bottom(plan.new_layer);
    const Coord zt    = zb + forest.layer_cells();
    const Coord d_haz = Coord(std::llround(forest.params().d_haz_layers * double(forest.layer_cells())));
    const Coord haz_lo = zb - d_haz;
    const bool  chamber = forest.mode() == GeometryMode::build_chamber;

    auto in_refine_zone = [&](const Cell &c) {
      const Coord s = w.size(c.level);
      return c.anchor.z < zt && c.anchor.z + s > haz_lo;
    };

    auto refine = [&](const Cell &c, std::deque<std::uint64_t> *queue) {
      const Cell  parent = c;
      const Coord h      = w.size(parent.level + 1);
      w.leaves.erase(cell_key(parent.level, parent.anchor));
      for (int q = 0; q < 8; ++q)
        {
          Cell ch        = parent;
          ch.level       = parent.level + 1;
          ch.anchor      = offset(parent.anchor, (q & 1) * h, ((q >> 1) & 1) * h, ((q >> 2) & 1) * h);
          ch.layer_index = ch.initially_consolidated ? -1 : layer_of_top(ch.anchor.z + h, forest.base_top(), forest.layer_cells());
          const auto key = cell_key(ch.level, ch.anchor);
          w.leaves.emplace(key, ch);
          if (queue)
            queue->push_back(key);
        }
      ++plan.n_refined;
    };

    auto sorted_keys = [&] {
      std::vector<std::uint64_t> keys;
      keys.reserve(w.leaves.size());
      for (const auto &[k, c] : w.leaves)
        keys.push_back(k);
      std::sort(keys.begin(), keys.end());
      return keys;
    };

    // new layer and HAZ to the finest level
    {
      std::deque<std::uint64_t> queue;
      for (auto k : sorted_keys())
        queue.push_back(k);
      while (!queue.empty())
        {
          const auto key = queue.front();
          queue.pop_front();
          auto it = w.leaves.find(key);
          if (it == w.leaves.end())
            continue;
          if (it->second.level < L && in_refine_zone(it->second))
            refine(it->second, &queue);
        }
    }
    for (auto &[k, c] : w.leaves)
      if (!c.is_active() && c.anchor.z >= zb && c.anchor.z + w.size(c.level) <= zt)
        {
          c.state = chamber ? CellState::active_powder_region : CellState::active;
          ++plan.n_activated;
        }

    // 2:1 balance over faces, edges and vertices
    {
      std::deque<std::uint64_t> queue;
      for (auto k : sorted_keys())
        queue.push_back(k);
      while (!queue.empty())
        {
          const auto key = queue.front();
          queue.pop_front();
          auto it = w.leaves.find(key);
          if (it == w.leaves.end())
            continue;
          const Cell  c = it->second;
          const Coord s = w.size(c.level);
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                {
                  if (dx == 0 && dy == 0 && dz == 0)
                    continue;
                  const Cell *n = w.containing(offset(c.anchor, dx * s, dy * s, dz * s));
                  if (n && n->level < c.level - 1)
                    {
                      refine(*n, &queue);
                      queue.push_back(key);
                    }
                }
        }
    }

    // coarsening to a fixpoint
    auto coarsening_keeps_balance = [&](int parent_level, const LatticePoint &pa) {
      const Coord ps = w.size(parent_level);
      if (parent_level + 2 > L)
        return true;
      const Coord q = ps / 4; // size of a level parent_level + 2 cell
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            {
              if (dx == 0 && dy == 0 && dz == 0)
                continue;
              const int d[3] = {dx, dy, dz};
              Coord     lo[3], hi[3];
              const Coord pa_[3] = {pa.x, pa.y, pa.z};
              for (int ax = 0; ax < 3; ++ax)
                {
                  if (d[ax] == 0)
                    {
                      lo[ax] = pa_[ax];
                      hi[ax] = pa_[ax] + ps - q;
                    }
                  else if (d[ax] < 0)
                    lo[ax] = hi[ax] = pa_[ax] - q;
                  else
                    lo[ax] = hi[ax] = pa_[ax] + ps;
                }
              for (Coord z = lo[2]; z <= hi[2]; z += q)
                for (Coord y = lo[1]; y <= hi[1]; y += q)
                  for (Coord x = lo[0]; x <= hi[0]; x += q)
                    {
                      const Cell *n = w.containing({x, y, z});
                      if (n && n->level >= parent_level + 2)
                        return false;
                    }
            }
      return true;
    };

    bool changed = true;
    while (changed)
      {
        changed = false;
        std::set<std::pair<int, std::tuple<Coord, Coord, Coord>>> parents;
        for (const auto &[k, c] : w.leaves)
          if (c.level > 0)
            {
              const Coord ps = w.size(c.level - 1);
              parents.insert({c.level - 1,
                              {floor_multiple(c.anchor.x, ps), floor_multiple(c.anchor.y, ps), floor_multiple(c.anchor.z, ps)}});
            }
        for (const auto &[pl, pt] : parents)
          {
            const LatticePoint pa{std::get<0>(pt), std::get<1>(pt), std::get<2>(pt)};
            const Coord        ps = w.size(pl);
            const Coord        h  = ps / 2;
            std::array<const Cell *, 8> kids{};
            bool                        complete = true;
            for (int q = 0; q < 8 && complete; ++q)
              {
                auto it = w.leaves.find(cell_key(pl + 1, offset(pa, (q & 1) * h, ((q >> 1) & 1) * h, ((q >> 2) & 1) * h)));
                if (it == w.leaves.end())
                  complete = false;
                else
                  kids[q] = &it->second;
              }
            if (!complete)
              continue;
            int n_active = 0;
            for (auto *k : kids)
              n_active += k->is_active();
            if (n_active != 0 && n_active != 8)
              continue;
            Cell parent    = *kids[0];
            parent.level   = pl;
            parent.anchor  = pa;
            if (n_active == 8)
              {
                if (pa.z + ps > haz_lo)
                  continue;
                bool   consolidated = true;
                double mn           = 1.0;
                for (auto *k : kids)
                  {
                    consolidated = consolidated && k->initially_consolidated;
                    mn           = std::min(mn, history_min_in_region(forest, history, k->level, k->anchor));
                  }
                if (mn < forest.params().r_coarsen)
                  continue;
                parent.initially_consolidated = consolidated;
                bool same_state = true;
                for (auto *k : kids)
                  same_state = same_state && k->state == parent.state;
                if (!same_state)
                  parent.state = CellState::active;
              }
            else if (pa.z < zt)
              continue;
            if (!coarsening_keeps_balance(pl, pa))
              continue;
            parent.layer_index =
              parent.initially_consolidated ? -1 : layer_of_top(pa.z + ps, forest.base_top(), forest.layer_cells());
            for (int q = 0; q < 8; ++q)
              w.leaves.erase(cell_key(pl + 1, offset(pa, (q & 1) * h, ((q >> 1) & 1) * h, ((q >> 2) & 1) * h)));
            w.leaves.emplace(cell_key(pl, pa), parent);
            if (n_active == 8)
              plan.coarsened_parents.emplace_back(pl, pa);
            ++plan.n_coarsened;
            changed = true;
          }
      }

    plan.target_cells.reserve(w.leaves.size());
    for (auto k : sorted_keys())
      plan.target_cells.push_back(w.leaves.at(k));
    return plan;
  }

  namespace
  {
    // Volume-weighted sum of old history inside a region; returns weight.
    double
    accumulate_history(const Forest &old, const HistoryField &h, int level, const LatticePoint &a, double &sum)
    {
      if (auto leaf = old.find_leaf(level, a))
        {
          const auto ai = old.active_index_of(*leaf);
          if (ai < 0)
            return 0.0;
          const double vol = std::ldexp(1.0, 3 * (old.max_level() - level));
          for (int q = 0; q < 8; ++q)
            sum += vol / 8.0 * h.r_c[8 * ai + q];
          return vol;
        }
      if (level >= old.max_level())
        return 0.0;
      const Coord s = old.cell_size(level + 1);
      double      w = 0.0;
      for (int q = 0; q < 8; ++q)
        w += accumulate_history(old, h, level + 1, offset(a, (q & 1) * s, ((q >> 1) & 1) * s, ((q >> 2) & 1) * s), sum);
      return w;
    }
  } // namespace

  MeshUpdateResult
  apply_update(const Forest &forest,
               const MeshUpdatePlan &plan,
               const std::vector<NodalField> &fields,
               const HistoryField &history,
               double T_initial)
  {
    if (plan.from_epoch != forest.epoch() || history.epoch != forest.epoch())
      throw StaleDataError("mesh update plan or history does not match the forest epoch");
    for (const auto &f : fields)
      if (f.epoch != forest.epoch() || f.size() != forest.dofs().n_dofs())
        throw StaleDataError("nodal field does not match the forest epoch");

    MeshUpdateResult r{ForestBuilder::with_cells(forest, plan.target_cells, plan.new_layer), {}, {}};
    const Forest &nf = r.forest;
    const auto   &od = forest.dofs();
    const auto   &nd = nf.dofs();

    // nodal fields
    struct Source
    {
      std::int64_t old_dof = -1; // direct injection
      std::int32_t old_cell = -1;
      double       weights[8]{};
    };
    std::vector<Source> src(nd.n_dofs());
    for (std::size_t i = 0; i < nd.n_dofs(); ++i)
      {
        const LatticePoint &p = nd.dof_position[i];
        if (auto it = od.dof_of_vertex.find(vertex_key(p)); it != od.dof_of_vertex.end())
          {
            src[i].old_dof = it->second;
            continue;
          }
        for (int o = 0; o < 8; ++o)
          {
            auto leaf = forest.leaf_containing(offset(p, -(o & 1), -((o >> 1) & 1), -((o >> 2) & 1)));
            if (!leaf || forest.active_index_of(*leaf) < 0)
              continue;
            const Cell  &c = forest.cells()[*leaf];
            const double s = double(forest.cell_size(c.level));
            const double xi[3] = {double(p.x - c.anchor.x) / s, double(p.y - c.anchor.y) / s, double(p.z - c.anchor.z) / s};
            src[i].old_cell = forest.active_index_of(*leaf);
            for (int a = 0; a < 8; ++a)
              {
                double wgt = 1.0;
                for (int ax = 0; ax < 3; ++ax)
                  wgt *= (a >> ax & 1) ? xi[ax] : 1.0 - xi[ax];
                src[i].weights[a] = wgt;
              }
            break;
          }
      }
    for (const auto &f : fields)
      {
        NodalField g{std::vector<double>(nd.n_dofs(), T_initial), nf.epoch()};
        for (std::size_t i = 0; i < nd.n_dofs(); ++i)
          {
            if (src[i].old_dof >= 0)
              g[i] = f[src[i].old_dof];
            else if (src[i].old_cell >= 0)
              {
                double v = 0.0;
                for (int a = 0; a < 8; ++a)
                  v += src[i].weights[a] * f[od.cell_dofs[src[i].old_cell][a]];
                g[i] = v;
              }
          }
        close_constraints(nf, g);
        r.fields.push_back(std::move(g));
      }

    // history
    r.history.epoch = nf.epoch();
    r.history.r_c.assign(8 * nf.n_active_cells(), 0.0);
    for (std::size_t k = 0; k < nf.n_active_cells(); ++k)
      {
        const Cell &c     = nf.active_cell(k);
        double     *out   = &r.history.r_c[8 * k];
        const double fresh = c.initially_consolidated ? 1.0 : 0.0;
        auto         leaf  = forest.leaf_containing(c.anchor);
        const Cell  &o     = forest.cells()[*leaf];
        const auto   oi    = forest.active_index_of(*leaf);
        if (o.level <= c.level)
          {
            if (oi < 0)
              {
                std::fill(out, out + 8, fresh);
                continue;
              }
            const double os = double(forest.cell_size(o.level));
            const double cs = double(nf.cell_size(c.level));
            for (int q = 0; q < 8; ++q)
              {
                int octant = 0;
                const double pos[3] = {double(c.anchor.x - o.anchor.x) + cs * ((q & 1) ? gauss_hi : gauss_lo),
                                       double(c.anchor.y - o.anchor.y) + cs * ((q >> 1 & 1) ? gauss_hi : gauss_lo),
                                       double(c.anchor.z - o.anchor.z) + cs * ((q >> 2 & 1) ? gauss_hi : gauss_lo)};
                for (int ax = 0; ax < 3; ++ax)
                  if (pos[ax] >= 0.5 * os)
                    octant |= 1 << ax;
                out[q] = history.r_c[8 * oi + octant];
              }
          }
        else
          {
            const Coord h = nf.cell_size(c.level + 1);
            for (int q = 0; q < 8; ++q)
              {
                double       sum = 0.0;
                const double wgt = accumulate_history(forest, history, c.level + 1,
                                                      offset(c.anchor, (q & 1) * h, ((q >> 1) & 1) * h, ((q >> 2) & 1) * h), sum);
                out[q]           = wgt > 0.0 ? sum / wgt : fresh;
              }
          }
      }
    return r;
  }

  std::vector<BatchInfo>
  build_batches(const Forest &forest, int n_lanes)
  {
    if (n_lanes != 1 && n_lanes != 2 && n_lanes != 4 && n_lanes != 8)
      throw ConfigError("n_lanes must be 1, 2, 4 or 8");
    const std::size_t      n = forest.n_active_cells();
    std::vector<BatchInfo> batches;
    for (std::size_t b = 0; b < n; b += n_lanes)
      {
        BatchInfo info;
        for (int l = 0; l < n_lanes; ++l)
          {
            const bool valid = b + l < n;
            info.cells.push_back(valid ? std::uint32_t(b + l) : std::uint32_t(n - 1));
            info.active_lane_mask.push_back(valid);
          }
        batches.push_back(std::move(info));
      }
    return batches;
  }

  void
  close_constraints(const Forest &forest, NodalField &v)
  {
    for (const auto &con : forest.dofs().constraints)
      {
        double s = 0.0;
        for (auto [m, w] : con.masters)
          s += w * v[m];
        v[con.slave] = s;
      }
  }

  std::optional<double>
  evaluate_at(const Forest &forest, const NodalField &T, const Point3 &x)
  {
    auto k = forest.locate_active(x);
    if (!k)
      return std::nullopt;
    const Cell  &c    = forest.active_cell(*k);
    const Point3 lo   = forest.to_physical(c.anchor);
    const double h    = forest.cell_edge(c.level);
    const double xi[3] = {std::clamp((x.x - lo.x) / h, 0.0, 1.0), std::clamp((x.y - lo.y) / h, 0.0, 1.0),
                          std::clamp((x.z - lo.z) / h, 0.0, 1.0)};
    double v = 0.0;
    for (int a = 0; a < 8; ++a)
      {
        double wgt = 1.0;
        for (int ax = 0; ax < 3; ++ax)
          wgt *= (a >> ax & 1) ? xi[ax] : 1.0 - xi[ax];
        v += wgt * T[forest.dofs().cell_dofs[*k][a]];
      }
    return v;
  }

  NodalField
  make_field(const Forest &forest, double value)
  {
    return {std::vector<double>(forest.dofs().n_dofs(), value), forest.epoch()};
  }

  HistoryField
  initial_history(const Forest &forest)
  {
    HistoryField h;
    h.epoch = forest.epoch();
    h.r_c.resize(8 * forest.n_active_cells());
    for (std::size_t k = 0; k < forest.n_active_cells(); ++k)
      std::fill_n(h.r_c.begin() + 8 * k, 8, forest.active_cell(k).initially_consolidated ? 1.0 : 0.0);
    return h;
  }

  double
  cell_mean_history(const HistoryField &history, std::size_t k)
  {
    double s = 0.0;
    for (int q = 0; q < 8; ++q)
      s += history.r_c[8 * k + q];
    return s / 8.0;
  }
} // namespace pbf
