#include <pbf/errors.hpp>
#include <pbf/process_driver.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>

namespace pbf
{
  namespace
  {
    double
    seconds_since(std::chrono::steady_clock::time_point t0)
    {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    template <typename E>
    [[noreturn]] void
    rethrow_with(const std::string &context, const E &e)
    {
      throw E(context + e.what());
    }
  } // namespace

  LayerPath
  generate_hatch(const std::vector<Rect> &section, const HatchParams &hatch, double z_top, int layer_index, double cool_time)
  {
    if (section.empty())
      throw ConfigError("empty cross-section in layer " + std::to_string(layer_index));
    if (!(hatch.spacing > 0.0))
      throw ConfigError("hatch spacing must be positive");
    for (std::size_t i = 0; i < section.size(); ++i)
      {
        const auto &a = section[i];
        if (!(a.hi.x > a.lo.x && a.hi.y > a.lo.y))
          throw ConfigError("degenerate hatch rectangle in layer " + std::to_string(layer_index));
        for (std::size_t j = 0; j < i; ++j)
          {
            const auto  &b  = section[j];
            const double ox = std::min(a.hi.x, b.hi.x) - std::max(a.lo.x, b.lo.x);
            const double oy = std::min(a.hi.y, b.hi.y) - std::max(a.lo.y, b.lo.y);
            if (ox > 0.0 && oy > 0.0)
              throw ConfigError("overlapping hatch rectangles in layer " + std::to_string(layer_index));
          }
      }
    LayerPath l;
    l.index     = layer_index;
    l.z_top     = z_top;
    l.cool_time = cool_time;
    const bool along_x = hatch.direction == HatchDirection::x;
    int        track   = 0;
    for (const auto &r : section)
      {
        const double across_lo = along_x ? r.lo.y : r.lo.x;
        const double width     = along_x ? r.hi.y - r.lo.y : r.hi.x - r.lo.x;
        const double a0 = along_x ? r.lo.x : r.lo.y, a1 = along_x ? r.hi.x : r.hi.y;
        const int    n     = std::max(1, int(std::floor(width / hatch.spacing + 1e-9)));
        const double first = across_lo + 0.5 * (width - (n - 1) * hatch.spacing);
        for (int j = 0; j < n; ++j, ++track)
          {
            const double c       = first + j * hatch.spacing;
            const bool   forward = (track % 2 == 0) != hatch.reversed;
            const double s = forward ? a0 : a1, e = forward ? a1 : a0;
            Segment      seg;
            seg.start = along_x ? Point2{s, c} : Point2{c, s};
            seg.end   = along_x ? Point2{e, c} : Point2{c, e};
            seg.speed = hatch.speed;
            seg.power = hatch.power;
            l.segments.push_back(seg);
          }
      }
    return l;
  }

  HatchParams
  rotated_hatch(const HatchParams &base, double rotation_step_deg, int layer)
  {
    const double q = rotation_step_deg / 90.0;
    if (std::abs(q - std::round(q)) > 1e-9)
      throw ConfigError("hatch rotation must be a multiple of 90 degrees");
    const int   quarter = ((int(std::lround(q)) * layer) % 4 + 4) % 4;
    HatchParams h       = base;
    const bool  turn    = quarter % 2 == 1;
    if (turn)
      h.direction = base.direction == HatchDirection::x ? HatchDirection::y : HatchDirection::x;
    if (quarter >= 2)
      h.reversed = !base.reversed;
    return h;
  }

  ScanPath
  BuildPlan::scan_path(const MeshParams &mesh) const
  {
    if (n_layers < 0)
      throw ConfigError("negative layer count");
    if (n_layers > 0 && sections.size() != 1 && sections.size() != std::size_t(n_layers))
      throw ConfigError("need one cross-section or one per layer");
    ScanPath p;
    for (int k = 0; k < n_layers; ++k)
      {
        const auto  &sec = sections.size() == 1 ? sections[0] : sections[k];
        const double z   = geometry.base_plate.hi.z + (k + 1) * mesh.h_powder;
        p.layers.push_back(generate_hatch(sec, rotated_hatch(hatch, rotation_step_deg, k), z, k, t_cool));
      }
    return p;
  }

  PartShape
  extract_part_shape(const HistoryField &history, const Forest &forest, double threshold)
  {
    PartShape s;
    if (history.epoch != forest.epoch())
      throw StaleDataError("history does not match the mesh");
    const auto   ext = forest.extent();
    const Coord  nx = ext[0], ny = ext[1], nz = ext[2];
    // voxel labels: -1 void or outside, 0 plate, 1 part, 2 unconsolidated
    std::vector<std::int32_t> owner(std::size_t(nx * ny * nz), -1);
    std::vector<std::int8_t>  label(owner.size(), -1);
    auto                      at = [&](Coord x, Coord y, Coord z) { return std::size_t((z * ny + y) * nx + x); };
    for (std::size_t k = 0; k < forest.n_active_cells(); ++k)
      {
        const Cell &c = forest.active_cell(k);
        const Coord sz = forest.cell_size(c.level);
        std::int8_t lab;
        if (c.initially_consolidated)
          lab = 0;
        else if (cell_mean_history(history, k) >= threshold)
          {
            lab = 1;
            s.cells.push_back(std::uint32_t(k));
            const double h = forest.cell_edge(c.level);
            s.volume += h * h * h;
          }
        else
          lab = 2;
        for (Coord z = c.anchor.z; z < c.anchor.z + sz; ++z)
          for (Coord y = c.anchor.y; y < c.anchor.y + sz; ++y)
            for (Coord x = c.anchor.x; x < c.anchor.x + sz; ++x)
              {
                owner[at(x, y, z)] = std::int32_t(k);
                label[at(x, y, z)] = lab;
              }
      }

    // components of the part, union-find over cells
    std::vector<std::int32_t> parent(forest.n_active_cells());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::int32_t a) {
      while (parent[a] != a)
        a = parent[a] = parent[parent[a]];
      return a;
    };
    for (Coord z = 0; z < nz; ++z)
      for (Coord y = 0; y < ny; ++y)
        for (Coord x = 0; x < nx; ++x)
          {
            if (label[at(x, y, z)] != 1)
              continue;
            const Coord nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
            for (const auto &p : nb)
              if (p[0] < nx && p[1] < ny && p[2] < nz && label[at(p[0], p[1], p[2])] == 1)
                parent[find(owner[at(x, y, z)])] = find(owner[at(p[0], p[1], p[2])]);
          }
    for (auto k : s.cells)
      s.components += find(std::int32_t(k)) == std::int32_t(k);

    // unconsolidated pockets not reaching void, the domain boundary or the
    // top surface
    std::vector<char> seen(label.size(), 0);
    for (std::size_t v0 = 0; v0 < label.size(); ++v0)
      {
        if (label[v0] != 2 || seen[v0])
          continue;
        bool                    open = false;
        std::deque<std::size_t> queue{v0};
        seen[v0] = 1;
        while (!queue.empty())
          {
            const std::size_t v = queue.front();
            queue.pop_front();
            const Coord x = Coord(v % nx), y = Coord((v / nx) % ny), z = Coord(v / (nx * ny));
            const Coord nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
            for (const auto &p : nb)
              {
                if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= nx || p[1] >= ny || p[2] >= nz)
                  {
                    open = true;
                    continue;
                  }
                const std::size_t w = at(p[0], p[1], p[2]);
                if (label[w] == -1)
                  open = true;
                else if (label[w] == 2 && !seen[w])
                  {
                    seen[w] = 1;
                    queue.push_back(w);
                  }
              }
          }
        s.enclosed_voids += !open;
      }
    return s;
  }

  BuildCheckpoint
  initial_checkpoint(const PartGeometry &geometry, const ProcessParams &params)
  {
    BuildCheckpoint cp;
    cp.forest        = build_coarse_grid(geometry, params.mesh);
    cp.state.T       = make_field(cp.forest, params.physics.boundary.T_ambient);
    cp.state.history = initial_history(cp.forest);
    return cp;
  }

  StepCriteria
  build_step_criteria(const ScanPath &path, const ProcessParams &params, const SolverSettings &settings)
  {
    double speed = 0.0;
    for (const auto &l : path.layers)
      for (const auto &s : l.segments)
        speed = std::max(speed, s.speed);
    const double h_fine = std::ldexp(params.mesh.h_powder, -params.mesh.extra_refinement);
    const double rho    = probe_spectral_radius(params.physics.material, h_fine, settings);
    return compute_step_criteria(rho, params.physics.source.radius, speed, settings.safety_factor);
  }

  BuildResult
  run_build(BuildCheckpoint cp,
            const ScanPath &path,
            const ProcessParams &params,
            const SolverSettings &settings,
            const RunOptions &options,
            int last_layer)
  {
    const auto t_start = std::chrono::steady_clock::now();
    path.validate();
    settings.validate();
    params.physics.material.validate();
    params.physics.boundary.validate();
    if (std::abs(params.physics.source.h_powder - params.mesh.h_powder) > 1e-9 * params.mesh.h_powder)
      throw ConfigError("heat source layer thickness differs from the mesh powder layer thickness");

    BuildResult res;
    res.criteria = build_step_criteria(path, params, settings);
    if (options.dt_override)
      res.criteria.dt_used = *options.dt_override;
    WorkerPool pool(options.threads, options.deterministic);

    const int last = last_layer < 0 ? int(path.layers.size()) - 1 : std::min(last_layer, int(path.layers.size()) - 1);
    if (options.on_layer && cp.next_layer == 0)
      options.on_layer(-1, cp.forest, cp.state);

    for (int li = cp.next_layer; li <= last; ++li)
      {
        const LayerPath &L = path.layers[li];
        LayerMetrics     m;
        m.layer             = L.index;
        const std::string context = "layer " + std::to_string(L.index) + ": ";
        const auto        t_layer = std::chrono::steady_clock::now();
        try
          {
            auto t0 = t_layer;
            if (L.index < cp.forest.current_layer())
              throw ScheduleError("scan path layer lies below the current mesh layer");
            while (cp.forest.current_layer() < L.index)
              {
                if (cp.forest.layer_bottom(cp.forest.current_layer() + 1) >= cp.forest.extent()[2])
                  throw ConfigError("scan path has more layers than the geometry");
                const auto plan = advance_layer(cp.forest, cp.state.history);
                auto       r    = apply_update(cp.forest, plan, {cp.state.T}, cp.state.history, params.physics.boundary.T_ambient);
                if (options.on_mesh_update)
                  options.on_mesh_update(cp.forest, cp.state.history, plan, r.forest);
                cp.forest        = std::move(r.forest);
                cp.state.T       = std::move(r.fields[0]);
                cp.state.history = std::move(r.history);
              }
            const double z_expected =
              cp.forest.to_physical({0, 0, cp.forest.layer_bottom(L.index) + cp.forest.layer_cells()}).z;
            if (std::abs(L.z_top - z_expected) > 1e-3 * params.mesh.h_powder)
              throw ConfigError("layer z = " + std::to_string(L.z_top) + " m does not match the mesh layer top " +
                                std::to_string(z_expected) + " m");
            m.amr_seconds = seconds_since(t0);

            const ThermalOperator op(cp.forest, params.physics, params.n_lanes, &pool);
            m.n_dofs         = op.n_dofs();
            m.n_active_cells = cp.forest.n_active_cells();
            double out_s     = 0.0;
            // cool-down steps past explicit_cooldown_steps are implicit
            auto cb = [&](bool cooldown) -> StepCallback {
              if (!options.on_step)
                return {};
              return [&, cooldown, k = 0](const ThermalState &s) mutable {
                const auto t        = std::chrono::steady_clock::now();
                const bool implicit = cooldown && k++ >= settings.explicit_cooldown_steps;
                options.on_step(cp.forest, s, implicit);
                out_s += seconds_since(t);
              };
            };
            const double t_layer0 = cp.state.time;
            const auto   scan     = run_scan_phase(cp.state, op, L, res.criteria, cb(false));
            m.scan_steps          = scan.explicit_steps;
            m.scan_seconds        = scan.seconds - std::min(scan.seconds, out_s);
            const double out_scan = out_s;
            const auto cool       = run_cooldown_phase(cp.state, op, L.cool_time, res.criteria, settings, cb(true));
            m.cooldown_explicit_steps = cool.explicit_steps;
            m.cooldown_implicit_steps = cool.implicit_steps;
            m.newton_iterations       = cool.newton_iterations;
            m.krylov_iterations       = cool.krylov_iterations;
            m.cooldown_seconds        = cool.seconds - std::min(cool.seconds, out_s - out_scan);
            m.simulated_time          = cp.state.time - t_layer0;
            if (options.on_layer)
              {
                const auto t = std::chrono::steady_clock::now();
                options.on_layer(L.index, cp.forest, cp.state);
                out_s += seconds_since(t);
              }
            m.output_seconds = out_s;
          }
        catch (const InstabilityError &e)
          {
            rethrow_with(context, e);
          }
        catch (const SolverError &e)
          {
            rethrow_with(context, e);
          }
        catch (const StaleDataError &e)
          {
            rethrow_with(context, e);
          }
        catch (const ScheduleError &e)
          {
            rethrow_with(context, e);
          }
        catch (const ConfigError &e)
          {
            rethrow_with(context, e);
          }
        m.wall_seconds = seconds_since(t_layer);
        res.layers.push_back(m);
        cp.next_layer = li + 1;
      }
    res.shape         = extract_part_shape(cp.state.history, cp.forest, 0.5);
    res.checkpoint    = std::move(cp);
    res.total_seconds = seconds_since(t_start);
    return res;
  }

  BuildResult
  run_build(const PartGeometry &geometry,
            const ScanPath &path,
            const ProcessParams &params,
            const SolverSettings &settings,
            const RunOptions &options)
  {
    return run_build(initial_checkpoint(geometry, params), path, params, settings, options);
  }

  ConvergenceScenario
  convergence_scenario(int refinement, double power)
  {
    if (refinement < 1)
      throw ConfigError("refinement factor must be at least 1");
    ConvergenceScenario s;
    s.geometry.mode       = GeometryMode::build_chamber;
    s.geometry.base_plate = {{0.0, -0.1e-3, 0.0}, {1.0e-3, 0.1e-3, 0.2e-3}};
    s.geometry.chamber    = {{0.0, -0.1e-3, 0.2e-3}, {1.0e-3, 0.1e-3, 0.28e-3}};
    s.params.mesh.h_powder = 40e-6;
    s.params.mesh.h_coarse = 40e-6;
    s.params.mesh.n_refine = 0;
    s.params.physics.source.radius   = 50e-6;
    s.params.physics.source.h_powder = 40e-6;
    for (int k = 0; k < 2; ++k)
      {
        LayerPath l;
        l.index     = k;
        l.z_top     = 0.2e-3 + (k + 1) * 40e-6;
        l.cool_time = 0.06;
        l.segments.push_back({{0.0, 0.0}, {1.0e-3, 0.0}, 1.0, power});
        s.path.layers.push_back(l);
      }
    s.dt_explicit                        = 2e-5 / refinement;
    s.settings.dt_implicit               = 2e-2 / refinement;
    s.settings.explicit_cooldown_steps   = 1000 * refinement;
    return s;
  }

  Trace
  run_convergence_scenario(const ConvergenceScenario &s, int threads)
  {
    Trace      tr;
    RunOptions o;
    o.threads     = threads;
    o.dt_override = s.dt_explicit;
    // process time at which each layer's scan ends
    std::vector<double> scan_end;
    double              t = 0.0;
    for (const auto &l : s.path.layers)
      {
        scan_end.push_back(t + l.scan_duration());
        t += l.scan_duration() + l.cool_time;
      }
    std::size_t layer = 0;
    o.on_layer        = [&](int, const Forest &, const ThermalState &) { layer = std::min(layer + 1, scan_end.size()); };
    o.on_step         = [&](const Forest &f, const ThermalState &st, bool implicit) {
      const auto v = evaluate_at(f, st.T, s.observation);
      tr.time.push_back(st.time);
      tr.value.push_back(v ? *v : std::nan(""));
      const std::size_t k = layer == 0 ? 0 : layer - 1;
      tr.phase.push_back(implicit ? 2 : st.time <= scan_end[k] * (1 + 1e-12) ? 0 : 1);
    };
    run_build(s.geometry, s.path, s.params, s.settings, o);
    return tr;
  }

  BuildPlan
  mini_bridge_plan(int n_layers)
  {
    BuildPlan p;
    p.geometry.mode       = GeometryMode::build_chamber;
    p.geometry.base_plate = {{0.0, 0.0, 0.0}, {1.28e-3, 0.32e-3, 0.16e-3}};
    p.geometry.chamber    = {{0.0, 0.0, 0.16e-3}, {1.28e-3, 0.32e-3, 0.96e-3}};
    p.n_layers            = n_layers;
    const std::vector<Rect> legs = {{{0.16e-3, 0.08e-3}, {0.48e-3, 0.24e-3}}, {{0.80e-3, 0.08e-3}, {1.12e-3, 0.24e-3}}};
    const std::vector<Rect> deck = {{{0.16e-3, 0.08e-3}, {1.12e-3, 0.24e-3}}};
    for (int k = 0; k < n_layers; ++k)
      p.sections.push_back(k < (3 * n_layers) / 5 ? legs : deck);
    p.hatch.spacing       = 80e-6;
    p.hatch.speed         = 1.0;
    p.hatch.power         = 100.0;
    p.rotation_step_deg   = 90.0;
    p.t_cool              = 2e-3;
    return p;
  }

  ProcessParams
  mini_bridge_params()
  {
    ProcessParams p;
    p.mesh.h_powder        = 40e-6;
    p.mesh.n_refine        = 2;
    p.mesh.h_coarse        = 160e-6;
    p.physics.source.radius   = 50e-6;
    p.physics.source.h_powder = 40e-6;
    return p;
  }
} // namespace pbf
