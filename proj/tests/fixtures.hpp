#ifndef PBF_TEST_FIXTURES_HPP
#define PBF_TEST_FIXTURES_HPP

#include <pbf/mesh_forest.hpp>
#include <pbf/operators.hpp>
#include <pbf/verification.hpp>

#include <random>
#include <string>
#include <vector>

namespace fixtures
{
  using namespace pbf;

  inline Box
  box(double x0, double y0, double z0, double x1, double y1, double z1)
  {
    return {{x0, y0, z0}, {x1, y1, z1}};
  }

  struct MeshState
  {
    Forest       forest;
    HistoryField history;
    NodalField   T;
  };

  inline MeshState
  start(const PartGeometry &g, const MeshParams &p, double T0 = 303.0)
  {
    MeshState s;
    s.forest  = build_coarse_grid(g, p);
    s.history = initial_history(s.forest);
    s.T       = make_field(s.forest, T0);
    return s;
  }

  inline void
  advance(MeshState &s, double T0 = 303.0)
  {
    const auto plan = advance_layer(s.forest, s.history);
    auto       r    = apply_update(s.forest, plan, {s.T}, s.history, T0);
    s.forest        = std::move(r.forest);
    s.history       = std::move(r.history);
    s.T             = std::move(r.fields[0]);
  }

  struct NamedMesh
  {
    std::string name;
    MeshState   state;
  };

  /// The oracle mesh set with fields attached.
  inline std::vector<NamedMesh>
  oracle_meshes()
  {
    std::vector<NamedMesh> out;
    for (auto &m : verify::oracle_meshes())
      {
        MeshState s{std::move(m.forest), std::move(m.history), {}};
        s.T = make_field(s.forest, 303.0);
        out.push_back({m.name, std::move(s)});
      }
    return out;
  }

  /// Random temperatures spanning powder, mushy and evaporating states, and
  /// random monotone-consistent history.
  inline void
  randomize(MeshState &s, std::mt19937_64 &rng, double lo = 300.0, double hi = 3600.0)
  {
    std::uniform_real_distribution<double> uT(lo, hi), ur(0.0, 1.0);
    for (auto &v : s.T.values)
      v = uT(rng);
    close_constraints(s.forest, s.T);
    for (auto &r : s.history.r_c)
      r = ur(rng);
  }
} // namespace fixtures

#endif
