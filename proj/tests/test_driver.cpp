#include "fixtures.hpp"

#include <pbf/errors.hpp>
#include <pbf/process_driver.hpp>

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace pbf;
using namespace fixtures;

namespace
{
  Rect
  rect(double x0, double y0, double x1, double y1)
  {
    return {{x0, y0}, {x1, y1}};
  }

  // two 0.2 mm tracks per layer on a small chamber, fast enough for repeats
  struct SmallBuild
  {
    PartGeometry   geometry;
    ScanPath       path;
    ProcessParams  params;
    SolverSettings settings;
  };

  SmallBuild
  small_build(int n_layers = 3)
  {
    SmallBuild b;
    b.geometry.base_plate        = box(0, 0, 0, 0.32e-3, 0.16e-3, 0.08e-3);
    // chamber height rounded up to whole 80 um coarse cells
    b.geometry.chamber = box(0, 0, 0.08e-3, 0.32e-3, 0.16e-3, 0.08e-3 + (n_layers + 1) / 2 * 80e-6);
    b.params.mesh.n_refine       = 1;
    b.params.mesh.h_coarse       = 80e-6;
    b.params.mesh.d_haz_layers   = 1;
    b.settings.explicit_cooldown_steps = 5;
    b.settings.dt_implicit       = 5e-4;
    BuildPlan plan;
    plan.geometry          = b.geometry;
    plan.n_layers          = n_layers;
    plan.sections          = {{rect(0.06e-3, 0.04e-3, 0.26e-3, 0.12e-3)}};
    plan.hatch.spacing     = 40e-6;
    plan.rotation_step_deg = 90;
    plan.t_cool            = 1.5e-3;
    b.path                 = plan.scan_path(b.params.mesh);
    return b;
  }

  bool
  same_bits(const std::vector<double> &a, const std::vector<double> &b)
  {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
} // namespace

TEST_CASE("serpentine hatch on a rectangle")
{
  HatchParams h;
  h.spacing     = 0.11e-3;
  const auto l  = generate_hatch({rect(0, 0, 1.0e-3, 0.33e-3)}, h, 0.2e-3, 0, 0.5);
  REQUIRE(l.segments.size() == 3);
  const double y[] = {0.055e-3, 0.165e-3, 0.275e-3};
  for (int i = 0; i < 3; ++i)
    {
      const auto &s = l.segments[i];
      CHECK(s.start.y == doctest::Approx(y[i]));
      CHECK(s.end.y == doctest::Approx(y[i]));
      CHECK(s.start.x == (i % 2 == 0 ? 0.0 : 1.0e-3));
      CHECK(s.end.x == (i % 2 == 0 ? 1.0e-3 : 0.0));
    }
  CHECK(l.path_length() == doctest::Approx(3.0e-3));
  CHECK(l.scan_duration() == doctest::Approx(3.0e-3));
  CHECK(l.z_top == 0.2e-3);

  // narrower than one spacing: a single centered track
  const auto one = generate_hatch({rect(0, 0, 1e-3, 0.05e-3)}, h, 0, 0, 0);
  REQUIRE(one.segments.size() == 1);
  CHECK(one.segments[0].start.y == doctest::Approx(0.025e-3));

  h.reversed   = true;
  const auto r = generate_hatch({rect(0, 0, 1.0e-3, 0.33e-3)}, h, 0, 0, 0);
  CHECK(r.segments[0].start.x == 1.0e-3);

  CHECK_THROWS_AS(generate_hatch({}, h, 0, 0, 0), ConfigError);
  CHECK_THROWS_AS(generate_hatch({rect(0, 0, 1, 1), rect(0.5, 0.5, 2, 2)}, h, 0, 0, 0), ConfigError);
  CHECK_THROWS_AS(generate_hatch({rect(0, 0, 0, 1)}, h, 0, 0, 0), ConfigError);
  h.spacing = 0.0;
  CHECK_THROWS_AS(generate_hatch({rect(0, 0, 1, 1)}, h, 0, 0, 0), ConfigError);
}

TEST_CASE("L-shaped section keeps alternating across rectangles")
{
  HatchParams h;
  h.spacing    = 0.1e-3;
  const auto l = generate_hatch({rect(0, 0, 1e-3, 0.2e-3), rect(0, 0.2e-3, 0.3e-3, 0.5e-3)}, h, 0, 0, 0);
  REQUIRE(l.segments.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK((l.segments[i].end.x > l.segments[i].start.x) == (i % 2 == 0));
  CHECK(l.segments[2].start.x == 0.0);
  CHECK(l.segments[3].start.x == 0.3e-3);
  CHECK(l.path_length() == doctest::Approx(2 * 1e-3 + 3 * 0.3e-3));
}

TEST_CASE("hatch rotation")
{
  HatchParams b;
  CHECK(rotated_hatch(b, 90, 0).direction == HatchDirection::x);
  CHECK(rotated_hatch(b, 90, 1).direction == HatchDirection::y);
  CHECK(rotated_hatch(b, 90, 2).direction == HatchDirection::x);
  CHECK(rotated_hatch(b, 90, 2).reversed);
  CHECK_FALSE(rotated_hatch(b, 90, 4).reversed);
  CHECK(rotated_hatch(b, -90, 1).direction == HatchDirection::y);
  CHECK(rotated_hatch(b, 0, 7).direction == HatchDirection::x);
  CHECK_THROWS_AS(rotated_hatch(b, 67, 1), ConfigError);

  const auto l = generate_hatch({rect(0, 0, 0.4e-3, 0.2e-3)}, rotated_hatch({0.1e-3}, 90, 1), 0, 0, 0);
  REQUIRE(l.segments.size() == 4);
  CHECK(l.segments[0].start.x == doctest::Approx(0.05e-3));
  CHECK(l.segments[0].start.y == 0.0);
  CHECK(l.segments[0].end.y == 0.2e-3);
}

TEST_CASE("path time accounting")
{
  const auto b = small_build(3);
  REQUIRE(b.path.layers.size() == 3);
  double expected = 0.0;
  for (const auto &l : b.path.layers)
    {
      double len = 0.0;
      for (const auto &s : l.segments)
        len += std::hypot(s.end.x - s.start.x, s.end.y - s.start.y) / s.speed;
      expected += len + 1.5e-3;
    }
  CHECK(b.path.total_time() == doctest::Approx(expected).epsilon(1e-14));
  for (int k = 0; k < 3; ++k)
    CHECK(b.path.layers[k].z_top == doctest::Approx(0.08e-3 + (k + 1) * 40e-6));

  BuildPlan bad;
  bad.n_layers = 2;
  bad.sections = {{rect(0, 0, 1, 1)}, {rect(0, 0, 1, 1)}, {rect(0, 0, 1, 1)}};
  CHECK_THROWS_AS(bad.scan_path({}), ConfigError);
}

TEST_CASE("part shape")
{
  // uniform 40 um cells, 10 x 10 plate one cell deep, four powder layers
  PartGeometry g;
  g.base_plate = box(0, 0, 0, 0.4e-3, 0.4e-3, 40e-6);
  g.chamber    = box(0, 0, 40e-6, 0.4e-3, 0.4e-3, 0.2e-3);
  auto s       = start(g, {});
  for (int k = 0; k < 4; ++k)
    advance(s);
  const double h = 40e-6;
  auto         set = [&](auto inside) {
    for (std::size_t c = 0; c < s.forest.n_active_cells(); ++c)
      {
        const auto &cell = s.forest.active_cell(c);
        const auto  lo   = s.forest.to_physical(cell.anchor);
        const int   i = int(std::lround(lo.x / h)), j = int(std::lround(lo.y / h)), k = int(std::lround(lo.z / h));
        if (cell.initially_consolidated)
          continue;
        for (int q = 0; q < 8; ++q)
          s.history.r_c[c * 8 + q] = inside(i, j, k) ? 1.0 : 0.0;
      }
  };

  SUBCASE("nothing consolidated")
  {
    set([](int, int, int) { return false; });
    const auto p = extract_part_shape(s.history, s.forest);
    CHECK(p.cells.empty());
    CHECK(p.components == 0);
    CHECK(p.enclosed_voids == 0);
  }
  SUBCASE("two pillars")
  {
    set([](int i, int j, int k) { return k >= 1 && k <= 3 && j == 5 && (i == 2 || i == 7); });
    const auto p = extract_part_shape(s.history, s.forest);
    CHECK(p.cells.size() == 6);
    CHECK(p.volume == doctest::Approx(6 * h * h * h));
    CHECK(p.components == 2);
    CHECK(p.enclosed_voids == 0);
  }
  SUBCASE("closed shell around a powder pocket")
  {
    set([](int i, int j, int k) {
      const bool cube = i >= 3 && i <= 5 && j >= 3 && j <= 5 && k >= 1 && k <= 3;
      return cube && !(i == 4 && j == 4 && k == 2);
    });
    const auto p = extract_part_shape(s.history, s.forest);
    CHECK(p.cells.size() == 26);
    CHECK(p.components == 1);
    CHECK(p.enclosed_voids == 1);
  }
  SUBCASE("open cup")
  {
    set([](int i, int j, int k) {
      const bool cube = i >= 3 && i <= 5 && j >= 3 && j <= 5 && k >= 1 && k <= 3;
      return cube && !(i == 4 && j == 4 && k >= 2);
    });
    const auto p = extract_part_shape(s.history, s.forest);
    CHECK(p.components == 1);
    CHECK(p.enclosed_voids == 0);
  }
  SUBCASE("threshold")
  {
    for (auto &r : s.history.r_c)
      r = std::max(r, 0.4);
    CHECK(extract_part_shape(s.history, s.forest, 0.5).cells.empty());
    CHECK(extract_part_shape(s.history, s.forest, 0.3).cells.size() == 400);
  }
  HistoryField stale = s.history;
  ++stale.epoch;
  CHECK_THROWS_AS(extract_part_shape(stale, s.forest), StaleDataError);
}

TEST_CASE("build runs")
{
  const auto b = small_build(3);

  SUBCASE("empty path is a no-op")
  {
    const auto r = run_build(b.geometry, ScanPath{}, b.params, b.settings);
    CHECK(r.layers.empty());
    const auto init = initial_checkpoint(b.geometry, b.params);
    CHECK(same_bits(r.checkpoint.state.T.values, init.state.T.values));
    CHECK(r.checkpoint.state.time == 0.0);
    CHECK(r.shape.cells.empty());
  }

  SUBCASE("layers, time and melt")
  {
    int        layer_calls = 0;
    RunOptions o;
    o.on_layer  = [&](int, const Forest &, const ThermalState &) { ++layer_calls; };
    const auto r = run_build(b.geometry, b.path, b.params, b.settings, o);
    REQUIRE(r.layers.size() == 3);
    CHECK(layer_calls == 4);
    CHECK(r.checkpoint.state.time == doctest::Approx(b.path.total_time()).epsilon(1e-12));
    for (const auto &m : r.layers)
      {
        CHECK(m.scan_steps > 0);
        CHECK(m.cooldown_explicit_steps == 5);
        CHECK(m.cooldown_implicit_steps >= 1);
        CHECK(m.newton_iterations >= m.cooldown_implicit_steps);
      }
    CHECK(r.shape.cells.size() > 0);
    CHECK(r.shape.components == 1);
  }

  SUBCASE("deterministic and resumable")
  {
    const auto full = run_build(b.geometry, b.path, b.params, b.settings);
    const auto again = run_build(b.geometry, b.path, b.params, b.settings);
    CHECK(same_bits(full.checkpoint.state.T.values, again.checkpoint.state.T.values));

    const auto first = run_build(initial_checkpoint(b.geometry, b.params), b.path, b.params, b.settings, {}, 0);
    REQUIRE(first.layers.size() == 1);
    CHECK(first.checkpoint.next_layer == 1);
    const auto rest = run_build(first.checkpoint, b.path, b.params, b.settings);
    CHECK(rest.layers.size() == 2);
    CHECK(same_bits(rest.checkpoint.state.T.values, full.checkpoint.state.T.values));
    CHECK(same_bits(rest.checkpoint.state.history.r_c, full.checkpoint.state.history.r_c));
    CHECK(rest.checkpoint.state.time == full.checkpoint.state.time);
    CHECK(rest.checkpoint.state.steps == full.checkpoint.state.steps);

    RunOptions threaded;
    threaded.threads       = 3;
    threaded.deterministic = false;
    const auto t3          = run_build(b.geometry, b.path, b.params, b.settings, threaded);
    CHECK(same_bits(t3.checkpoint.state.T.values, full.checkpoint.state.T.values));
  }

  SUBCASE("errors carry the layer")
  {
    RunOptions o;
    o.dt_override = 1e-3; // several times the stability limit
    auto long_cool = b.path;
    long_cool.layers[0].cool_time = 10.0;
    auto s         = b.settings;
    s.explicit_cooldown_steps = 5000;
    try
      {
        run_build(b.geometry, long_cool, b.params, s, o);
        FAIL("expected InstabilityError");
      }
    catch (const InstabilityError &e)
      {
        CHECK(std::string(e.what()).rfind("layer 0: ", 0) == 0);
      }

    auto shifted = b.path;
    shifted.layers[1].z_top += 20e-6;
    try
      {
        run_build(b.geometry, shifted, b.params, b.settings);
        FAIL("expected ConfigError");
      }
    catch (const ConfigError &e)
      {
        CHECK(std::string(e.what()).rfind("layer 1: ", 0) == 0);
      }

    auto tall = b.path;
    for (int k = 3; k < 5; ++k)
      {
        tall.layers.push_back(tall.layers.back());
        tall.layers.back().index = k;
        tall.layers.back().z_top += 40e-6;
      }
    CHECK_THROWS_AS(run_build(b.geometry, tall, b.params, b.settings), ConfigError);

    auto p                  = b.params;
    p.physics.source.h_powder = 30e-6;
    CHECK_THROWS_AS(run_build(b.geometry, b.path, p, b.settings), ConfigError);
  }
}

TEST_CASE("phases of the convergence trace")
{
  auto sc                           = convergence_scenario(1);
  sc.path.layers.resize(1);
  sc.path.layers[0].cool_time       = 2e-3;
  sc.settings.explicit_cooldown_steps = 10;
  sc.settings.dt_implicit           = 5e-4;
  const auto tr = run_convergence_scenario(sc);
  std::size_t n[3] = {0, 0, 0};
  for (auto p : tr.phase)
    ++n[p];
  CHECK(n[0] == 50); // 1 mm at 1 m/s in 20 us steps
  CHECK(n[1] == 10);
  CHECK(n[2] == 4); // (2 ms - 0.2 ms) / 0.5 ms, last one shortened
  CHECK(std::is_sorted(tr.phase.begin(), tr.phase.end()));
  CHECK_THROWS_AS(convergence_scenario(0), ConfigError);
}
