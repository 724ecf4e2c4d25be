#include "fixtures.hpp"

#include <pbf/errors.hpp>

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace pbf;
using namespace fixtures;

namespace
{
  double
  linear(const Point3 &x)
  {
    return 1000.0 * x.x - 2000.0 * x.y + 3000.0 * x.z + 303.0;
  }

  NodalField
  linear_field(const Forest &f)
  {
    NodalField T = make_field(f, 0.0);
    for (std::size_t i = 0; i < T.size(); ++i)
      T[i] = linear(f.to_physical(f.dofs().dof_position[i]));
    return T;
  }

  /// plate of 2x2x2 coarse cells under a tall chamber, one refinement level
  PartGeometry
  small_chamber()
  {
    PartGeometry g;
    g.base_plate = box(0, 0, 0, 0.16e-3, 0.16e-3, 0.16e-3);
    g.chamber    = box(0, 0, 0.16e-3, 0.16e-3, 0.16e-3, 0.64e-3);
    return g;
  }

  MeshParams
  one_level()
  {
    MeshParams p;
    p.n_refine     = 1;
    p.h_coarse     = 80e-6;
    p.d_haz_layers = 2;
    return p;
  }
} // namespace

TEST_CASE("coarse grid")
{
  PartGeometry g;
  g.base_plate = box(0, 0, 0, 0.64e-3, 0.64e-3, 0.64e-3);
  g.chamber    = box(0, 0, 0.64e-3, 0.64e-3, 0.64e-3, 1.28e-3);
  MeshParams p;
  p.n_refine = 4;
  p.h_coarse = 0.64e-3;
  const auto f = build_coarse_grid(g, p);
  CHECK(f.cells().size() == 2);
  CHECK(f.cell_edge(0) == doctest::Approx(0.64e-3));
  CHECK(f.h_fine() == doctest::Approx(40e-6));
  CHECK(f.n_active_cells() == 1);

  SUBCASE("no refinement levels")
  {
    MeshParams q;
    auto       s    = start(small_chamber(), q);
    const auto plan = advance_layer(s.forest, s.history);
    CHECK(plan.n_refined == 0);
    CHECK(plan.n_coarsened == 0);
    CHECK(plan.n_activated == 16);
  }
}

TEST_CASE("boundary-fitted bridge tiles the union")
{
  PartGeometry g;
  g.mode       = GeometryMode::boundary_fitted;
  g.base_plate = box(0, 0, 0, 0.32e-3, 0.08e-3, 0.08e-3);
  g.part       = {box(0, 0, 0.08e-3, 0.16e-3, 0.08e-3, 0.24e-3), box(0.16e-3, 0, 0.08e-3, 0.32e-3, 0.08e-3, 0.24e-3)};
  MeshParams p;
  p.n_refine = 1;
  p.h_coarse = 80e-6;
  const auto f = build_coarse_grid(g, p);
  CHECK(f.cells().size() == 12);
  std::set<std::tuple<Coord, Coord, Coord>> anchors;
  double                                    volume = 0.0;
  for (const auto &c : f.cells())
    {
      CHECK(c.level == 0);
      anchors.insert({c.anchor.x, c.anchor.y, c.anchor.z});
      volume += std::pow(f.cell_edge(c.level), 3);
    }
  CHECK(anchors.size() == 12);
  CHECK(volume == doctest::Approx(0.32e-3 * 0.08e-3 * 0.08e-3 + 2 * 0.08e-3 * 0.08e-3 * 0.16e-3));
}

TEST_CASE("geometry errors")
{
  MeshParams p;
  {
    PartGeometry g = small_chamber();
    g.chamber.hi.z = 0.65e-3; // not a multiple of the layer height
    CHECK_THROWS_AS(build_coarse_grid(g, p), ConfigError);
  }
  {
    PartGeometry g = small_chamber();
    g.chamber.lo.z = 0.2e-3; // floating chamber
    CHECK_THROWS_AS(build_coarse_grid(g, p), ConfigError);
  }
  {
    PartGeometry g;
    g.mode       = GeometryMode::boundary_fitted;
    g.base_plate = box(0, 0, 0, 0.16e-3, 0.16e-3, 0.04e-3);
    g.part       = {box(0, 0, 0.04e-3, 0.08e-3, 0.08e-3, 0.08e-3), box(0.04e-3, 0, 0.04e-3, 0.12e-3, 0.08e-3, 0.08e-3)};
    CHECK_THROWS_AS(build_coarse_grid(g, p), ConfigError);
  }
  MeshParams bad;
  bad.n_refine = 3;
  bad.h_coarse = 0.3e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.h_coarse = 0.32e-3;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("coarsening follows the consolidation threshold")
{
  auto                s = start(small_chamber(), one_level());
  std::size_t         coarsened_full = 0;
  const LatticePoint  marked{0, 0, s.forest.base_top() - 1};
  for (int layer = 0; layer < 10; ++layer)
    {
      // everything consolidated except the finest cell at the lattice origin
      std::fill(s.history.r_c.begin(), s.history.r_c.end(), 1.0);
      if (auto leaf = s.forest.find_leaf(s.forest.max_level(), marked))
        {
          const auto ai = s.forest.active_index_of(*leaf);
          for (int q = 0; q < 8; ++q)
            s.history.r_c[8 * std::size_t(ai) + q] = 0.5;
        }
      const auto plan = advance_layer(s.forest, s.history);
      for (const auto &[level, anchor] : plan.coarsened_parents)
        {
          const Coord sz = s.forest.cell_size(level);
          const bool  has_marked = anchor.x <= marked.x && marked.x < anchor.x + sz && anchor.y <= marked.y &&
                                  marked.y < anchor.y + sz && anchor.z <= marked.z && marked.z < anchor.z + sz;
          CHECK_FALSE(has_marked);
          coarsened_full += !has_marked;
        }
      auto r    = apply_update(s.forest, plan, {s.T}, s.history, 303.0);
      s.forest  = std::move(r.forest);
      s.history = std::move(r.history);
      s.T       = std::move(r.fields[0]);
      CHECK_FALSE(s.forest.find_balance_violation());
    }
  CHECK(coarsened_full > 0);
  CHECK(s.forest.find_leaf(s.forest.max_level(), marked));
}

TEST_CASE("powder is never coarsened")
{
  auto s = start(small_chamber(), one_level());
  for (int layer = 0; layer < 10; ++layer)
    {
      for (std::size_t c = 0; c < s.forest.n_active_cells(); ++c)
        if (!s.forest.active_cell(c).initially_consolidated)
          for (int q = 0; q < 8; ++q)
            s.history.r_c[8 * c + q] = 0.0;
      const auto plan = advance_layer(s.forest, s.history);
      for (const auto &[level, anchor] : plan.coarsened_parents)
        CHECK(anchor.z + s.forest.cell_size(level) <= s.forest.base_top());
      advance(s);
    }
}

TEST_CASE("transfer of linear fields and constant history")
{
  auto s = start(small_chamber(), one_level());
  for (int layer = 0; layer < 8; ++layer)
    {
      std::fill(s.history.r_c.begin(), s.history.r_c.end(), 0.95);
      s.T              = linear_field(s.forest);
      const auto plan  = advance_layer(s.forest, s.history);
      const auto r     = apply_update(s.forest, plan, {s.T}, s.history, std::numeric_limits<double>::quiet_NaN());
      const auto &dofs = r.forest.dofs();
      std::size_t fresh = 0;
      for (std::size_t i = 0; i < dofs.n_dofs(); ++i)
        {
          const double v = r.fields[0][i];
          if (std::isnan(v))
            {
              ++fresh;
              continue;
            }
          const double ref = linear(r.forest.to_physical(dofs.dof_position[i]));
          CHECK(std::abs(v - ref) <= 1e-12 * std::abs(ref));
        }
      CHECK(fresh > 0);
      for (const auto &[level, anchor] : plan.coarsened_parents)
        {
          const auto leaf = r.forest.find_leaf(level, anchor);
          REQUIRE(leaf);
          const auto ai = r.forest.active_index_of(*leaf);
          if (ai < 0)
            continue;
          for (int q = 0; q < 8; ++q)
            CHECK(r.history.r_c[8 * std::size_t(ai) + q] == doctest::Approx(0.95).epsilon(1e-15));
        }
      s.forest  = r.forest;
      s.history = r.history;
      s.T       = make_field(s.forest, 303.0);
    }
}

TEST_CASE("refinement copies history from the parent octant")
{
  auto s = start(small_chamber(), one_level());
  // distinct values per quadrature point of the coarse plate cells
  for (std::size_t i = 0; i < s.history.r_c.size(); ++i)
    s.history.r_c[i] = 0.5 + 0.01 * double(i % 8);
  const auto plan = advance_layer(s.forest, s.history);
  REQUIRE(plan.n_refined > 0);
  const auto r = apply_update(s.forest, plan, {s.T}, s.history, 303.0);
  for (std::size_t c = 0; c < r.forest.n_active_cells(); ++c)
    {
      const auto &cell = r.forest.active_cell(c);
      if (!cell.initially_consolidated || cell.level != r.forest.max_level())
        continue;
      // all points of a child share the parent octant value
      const double v0 = r.history.r_c[8 * c];
      for (int q = 1; q < 8; ++q)
        CHECK(r.history.r_c[8 * c + q] == v0);
      const int ox = int(cell.anchor.x % 2), oy = int(cell.anchor.y % 2), oz = int(cell.anchor.z % 2);
      CHECK(v0 == doctest::Approx(0.5 + 0.01 * (ox + 2 * oy + 4 * oz)));
    }
}

TEST_CASE("cell batches")
{
  PartGeometry g;
  g.mode       = GeometryMode::boundary_fitted;
  g.base_plate = box(0, 0, 0, 0.28e-3, 0.04e-3, 0.04e-3);
  const auto f = build_coarse_grid(g, {});
  REQUIRE(f.n_active_cells() == 7);
  const auto b4 = build_batches(f, 4);
  REQUIRE(b4.size() == 2);
  CHECK(std::count(b4[1].active_lane_mask.begin(), b4[1].active_lane_mask.end(), true) == 3);
  CHECK(std::count(b4[1].active_lane_mask.begin(), b4[1].active_lane_mask.end(), false) == 1);
  const auto b1 = build_batches(f, 1);
  CHECK(b1.size() == 7);
  for (const auto &b : b1)
    CHECK(b.active_lane_mask == std::vector<bool>{true});
  CHECK_THROWS_AS(build_batches(f, 3), ConfigError);
}

TEST_CASE("exposed faces")
{
  const auto meshes = oracle_meshes();
  {
    const auto &f = meshes[0].state.forest;
    REQUIRE(f.faces().size() == 1);
    CHECK(f.faces()[0].direction == 5);
  }
  {
    // fitted step: the uncovered ring of layer 0 and the top of layer 1
    const auto &f = meshes[3].state.forest;
    std::size_t ring = 0, top = 0;
    for (const auto &face : f.faces())
      {
        CHECK(face.direction == 5);
        const auto &c = f.active_cell(face.active_cell);
        ring += c.layer_index == 0;
        top += c.layer_index == 1;
      }
    CHECK(ring == 4);
    CHECK(top == 4);
  }
  for (const auto &m : meshes)
    for (const auto &face : m.state.forest.faces())
      {
        // no face between two active cells
        const auto &f  = m.state.forest;
        const auto &c  = f.active_cell(face.active_cell);
        const Coord sz = f.cell_size(c.level);
        LatticePoint p = c.anchor;
        const int    axis = face.direction / 2;
        Coord       *comp[3] = {&p.x, &p.y, &p.z};
        *comp[axis] += face.direction % 2 ? sz : -1;
        if (!f.in_domain(p))
          continue;
        const auto leaf = f.leaf_containing(p);
        REQUIRE(leaf);
        CHECK(f.active_index_of(*leaf) < 0);
      }
}

TEST_CASE("hanging node constraints")
{
  std::mt19937_64 rng(11);
  for (auto &[name, s] : oracle_meshes())
    {
      CAPTURE(name);
      const auto &dofs = s.forest.dofs();
      NodalField  T    = linear_field(s.forest);
      NodalField  g    = T;
      for (const auto &c : dofs.constraints)
        g[c.slave] = 1e9;
      close_constraints(s.forest, g);
      for (std::size_t i = 0; i < T.size(); ++i)
        CHECK(g[i] == doctest::Approx(T[i]).epsilon(1e-13));
      for (const auto &c : dofs.constraints)
        {
          double w = 0.0;
          for (const auto &[m, wt] : c.masters)
            {
              w += wt;
              CHECK_FALSE(dofs.is_constrained(m));
            }
          CHECK(w == doctest::Approx(1.0).epsilon(1e-15));
        }
      // evaluation is exact for linear fields
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int k = 0; k < 20; ++k)
        {
          const auto &c  = s.forest.active_cell(std::size_t(u(rng) * double(s.forest.n_active_cells())) %
                                               s.forest.n_active_cells());
          const double h = s.forest.cell_edge(c.level);
          auto         x = s.forest.to_physical(c.anchor);
          x.x += u(rng) * h;
          x.y += u(rng) * h;
          x.z += u(rng) * h;
          const auto v = evaluate_at(s.forest, T, x);
          REQUIRE(v);
          CHECK(*v == doctest::Approx(linear(x)).epsilon(1e-12));
        }
    }
}

TEST_CASE("stale fields are rejected")
{
  auto s    = start(small_chamber(), one_level());
  auto old  = s.T;
  advance(s);
  PhysicsParams pp;
  ThermalOperator op(s.forest, pp, 4);
  CHECK_THROWS_AS(op.evaluate_rhs(old, s.history, {}), StaleDataError);
}
