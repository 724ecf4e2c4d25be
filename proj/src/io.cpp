#include <pbf/errors.hpp>
#include <pbf/io.hpp>

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace pbf
{
  namespace
  {
    enum class Dim
    {
      none,
      length,
      time,
      power,
      speed,
      temperature,
      angle,
      conductivity,
      density,
      heat_capacity,
      pressure,
      specific_energy
    };

    const std::vector<std::pair<std::string, double>> &
    units_of(Dim d)
    {
      static const std::map<Dim, std::vector<std::pair<std::string, double>>> table = {
        {Dim::none, {}},
        {Dim::length, {{"m", 1.0}, {"mm", 1e-3}, {"um", 1e-6}, {"\xc2\xb5m", 1e-6}}},
        {Dim::time, {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"\xc2\xb5s", 1e-6}}},
        {Dim::power, {{"W", 1.0}, {"kW", 1e3}}},
        {Dim::speed, {{"m/s", 1.0}, {"mm/s", 1e-3}}},
        {Dim::temperature, {{"K", 1.0}}},
        {Dim::angle, {{"deg", 1.0}}},
        {Dim::conductivity, {{"W/m/K", 1.0}}},
        {Dim::density, {{"kg/m^3", 1.0}}},
        {Dim::heat_capacity, {{"J/kg/K", 1.0}}},
        {Dim::pressure, {{"Pa", 1.0}}},
        {Dim::specific_energy, {{"J/kg", 1.0}}},
      };
      return table.at(d);
    }

    std::string
    trim(const std::string &s)
    {
      std::size_t a = 0, b = s.size();
      while (a < b && std::isspace((unsigned char)s[a]))
        ++a;
      while (b > a && std::isspace((unsigned char)s[b - 1]))
        --b;
      return s.substr(a, b - a);
    }

    std::vector<std::string>
    split_ws(const std::string &s)
    {
      std::istringstream       in(s);
      std::vector<std::string> out;
      for (std::string t; in >> t;)
        out.push_back(t);
      return out;
    }

    std::string
    fmt(double v)
    {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    }

    /// number with an optional unit, attached or after blanks
    double
    parse_quantity(const std::string &raw, Dim d, int line, const std::string &what)
    {
      const std::string s = trim(raw);
      if (s.empty() || !(std::isdigit((unsigned char)s[0]) || s[0] == '-' || s[0] == '+' || s[0] == '.'))
        throw ConfigError("expected a number for " + what + ", got '" + s + "'", line);
      char        *end = nullptr;
      const double v   = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || !std::isfinite(v))
        throw ConfigError("expected a number for " + what + ", got '" + s + "'", line);
      const std::string unit = trim(std::string(end));
      if (unit.empty())
        return v;
      for (const auto &[name, factor] : units_of(d))
        if (unit == name)
          return v * factor;
      throw ConfigError("unit '" + unit + "' is not valid for " + what, line);
    }

    long
    parse_integer(const std::string &raw, int line, const std::string &what)
    {
      const std::string s   = trim(raw);
      char             *end = nullptr;
      const long        v   = std::strtol(s.c_str(), &end, 10);
      if (s.empty() || *end != '\0')
        throw ConfigError("expected an integer for " + what + ", got '" + s + "'", line);
      return v;
    }

    bool
    parse_bool(const std::string &raw, int line, const std::string &what)
    {
      const std::string s = trim(raw);
      if (s == "true" || s == "yes" || s == "1")
        return true;
      if (s == "false" || s == "no" || s == "0")
        return false;
      throw ConfigError("expected true or false for " + what + ", got '" + s + "'", line);
    }

    std::vector<double>
    parse_lengths(const std::string &raw, std::size_t n, int line, const std::string &what)
    {
      const auto          tok = split_ws(raw);
      std::vector<double> out;
      if (tok.size() != n)
        throw ConfigError(what + " needs " + std::to_string(n) + " lengths", line);
      for (const auto &t : tok)
        out.push_back(parse_quantity(t, Dim::length, line, what));
      return out;
    }

    std::vector<std::string>
    split_list(const std::string &raw)
    {
      std::vector<std::string> out;
      std::string              cur;
      for (char c : raw)
        if (c == ';')
          {
            out.push_back(trim(cur));
            cur.clear();
          }
        else
          cur += c;
      out.push_back(trim(cur));
      return out;
    }

    Box
    parse_box(const std::string &raw, int line, const std::string &what)
    {
      const auto v = parse_lengths(raw, 6, line, what);
      Box        b{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
      if (!(b.hi.x > b.lo.x && b.hi.y > b.lo.y && b.hi.z > b.lo.z))
        throw ConfigError(what + " needs lower corner below upper corner", line);
      return b;
    }

    Rect
    parse_rect(const std::string &raw, int line, const std::string &what)
    {
      const auto v = parse_lengths(raw, 4, line, what);
      Rect       r{{v[0], v[1]}, {v[2], v[3]}};
      if (!(r.hi.x > r.lo.x && r.hi.y > r.lo.y))
        throw ConfigError(what + " needs lower corner below upper corner", line);
      return r;
    }

    std::string
    fmt_box(const Box &b)
    {
      return fmt(b.lo.x) + " " + fmt(b.lo.y) + " " + fmt(b.lo.z) + " " + fmt(b.hi.x) + " " + fmt(b.hi.y) + " " +
             fmt(b.hi.z);
    }

    std::string
    fmt_rect(const Rect &r)
    {
      return fmt(r.lo.x) + " " + fmt(r.lo.y) + " " + fmt(r.hi.x) + " " + fmt(r.hi.y);
    }

    struct Key
    {
      std::string section;
      std::string name;
      bool        required;
      std::string doc;
      std::function<void(RunConfig &, const std::string &, int)> set;
      std::function<std::optional<std::string>(const RunConfig &)> get; // nullopt: not written
    };

    template <typename Ref>
    Key
    quantity(std::string sec, std::string name, Dim d, bool req, std::string doc, Ref ref)
    {
      const std::string what = "[" + sec + "]." + name;
      return {sec,
              name,
              req,
              std::move(doc),
              [=](RunConfig &c, const std::string &v, int line) { ref(c) = parse_quantity(v, d, line, what); },
              [=](const RunConfig &c) { return std::optional<std::string>(fmt(ref(c))); }};
    }

    template <typename Ref>
    Key
    integer(std::string sec, std::string name, bool req, std::string doc, Ref ref)
    {
      const std::string what = "[" + sec + "]." + name;
      return {sec,
              name,
              req,
              std::move(doc),
              [=](RunConfig &c, const std::string &v, int line) {
                ref(c) = std::remove_reference_t<decltype(ref(c))>(parse_integer(v, line, what));
              },
              [=](const RunConfig &c) { return std::optional<std::string>(std::to_string(ref(c))); }};
    }

    template <typename Ref>
    Key
    boolean(std::string sec, std::string name, std::string doc, Ref ref)
    {
      const std::string what = "[" + sec + "]." + name;
      return {sec,
              name,
              false,
              std::move(doc),
              [=](RunConfig &c, const std::string &v, int line) { ref(c) = parse_bool(v, line, what); },
              [=](const RunConfig &c) { return std::optional<std::string>(ref(c) ? "true" : "false"); }};
    }

    const std::vector<Key> &
    keys()
    {
      static const std::vector<Key> k = [] {
        std::vector<Key> v;
        // material and surface
        v.push_back(quantity("material", "k_powder", Dim::conductivity, false, "0.2 W/m/K",
                             [](auto &c) -> auto & { return c.process.physics.material.k_powder; }));
        v.push_back(quantity("material", "k_melt", Dim::conductivity, false, "20 W/m/K",
                             [](auto &c) -> auto & { return c.process.physics.material.k_melt; }));
        v.push_back(quantity("material", "k_solid", Dim::conductivity, false, "20 W/m/K",
                             [](auto &c) -> auto & { return c.process.physics.material.k_solid; }));
        v.push_back(quantity("material", "density", Dim::density, false, "7430 kg/m^3",
                             [](auto &c) -> auto & { return c.process.physics.material.density; }));
        v.push_back(quantity("material", "specific_heat", Dim::heat_capacity, false, "965 J/kg/K",
                             [](auto &c) -> auto & { return c.process.physics.material.specific_heat; }));
        v.push_back(quantity("material", "T_solidus", Dim::temperature, false, "1500 K",
                             [](auto &c) -> auto & { return c.process.physics.material.T_solidus; }));
        v.push_back(quantity("material", "T_liquidus", Dim::temperature, false, "1900 K",
                             [](auto &c) -> auto & { return c.process.physics.material.T_liquidus; }));
        v.push_back(quantity("material", "emissivity", Dim::none, false, "0.7",
                             [](auto &c) -> auto & { return c.process.physics.boundary.emissivity; }));
        v.push_back(quantity("material", "T_ambient", Dim::temperature, false, "303 K, also the initial temperature",
                             [](auto &c) -> auto & { return c.process.physics.boundary.T_ambient; }));
        v.push_back(quantity("material", "T_boiling", Dim::temperature, false, "3000 K",
                             [](auto &c) -> auto & { return c.process.physics.boundary.T_boiling; }));
        v.push_back(quantity("material", "C_P", Dim::pressure, false, "54e3 Pa",
                             [](auto &c) -> auto & { return c.process.physics.boundary.C_P; }));
        v.push_back(quantity("material", "C_T", Dim::temperature, false, "5e4 K",
                             [](auto &c) -> auto & { return c.process.physics.boundary.C_T; }));
        v.push_back(quantity("material", "C_M", Dim::none, false, "1e-3 K s^2/m^2",
                             [](auto &c) -> auto & { return c.process.physics.boundary.C_M; }));
        v.push_back(quantity("material", "h_v", Dim::specific_energy, false, "6e6 J/kg",
                             [](auto &c) -> auto & { return c.process.physics.boundary.h_v; }));
        v.push_back(quantity("material", "T_h0", Dim::temperature, false, "663 K",
                             [](auto &c) -> auto & { return c.process.physics.boundary.T_h0; }));
        v.push_back(quantity("material", "T_max_offset", Dim::temperature, false, "1000 K above T_boiling",
                             [](auto &c) -> auto & { return c.process.physics.boundary.T_max_offset; }));
        // laser
        v.push_back(quantity("laser", "radius", Dim::length, true, "required",
                             [](auto &c) -> auto & { return c.process.physics.source.radius; }));
        v.push_back(quantity("laser", "power", Dim::power, true, "required, effective absorbed power",
                             [](auto &c) -> auto & { return c.plan.hatch.power; }));
        v.push_back(quantity("laser", "speed", Dim::speed, true, "required",
                             [](auto &c) -> auto & { return c.plan.hatch.speed; }));
        v.push_back(quantity("laser", "hatch_spacing", Dim::length, false, "80 um",
                             [](auto &c) -> auto & { return c.plan.hatch.spacing; }));
        v.push_back({"laser", "hatch_direction", false, "x",
                     [](RunConfig &c, const std::string &s, int line) {
                       const auto t = trim(s);
                       if (t == "x")
                         c.plan.hatch.direction = HatchDirection::x;
                       else if (t == "y")
                         c.plan.hatch.direction = HatchDirection::y;
                       else
                         throw ConfigError("[laser].hatch_direction must be x or y", line);
                     },
                     [](const RunConfig &c) {
                       return std::optional<std::string>(c.plan.hatch.direction == HatchDirection::x ? "x" : "y");
                     }});
        v.push_back(boolean("laser", "hatch_reversed", "false", [](auto &c) -> auto & { return c.plan.hatch.reversed; }));
        v.push_back(quantity("laser", "rotation", Dim::angle, false, "0 deg per layer, multiple of 90",
                             [](auto &c) -> auto & { return c.plan.rotation_step_deg; }));
        // mesh
        v.push_back({"mesh", "mode", false, "chamber (or fitted)",
                     [](RunConfig &c, const std::string &s, int line) {
                       const auto t = trim(s);
                       if (t == "chamber")
                         c.plan.geometry.mode = GeometryMode::build_chamber;
                       else if (t == "fitted")
                         c.plan.geometry.mode = GeometryMode::boundary_fitted;
                       else
                         throw ConfigError("[mesh].mode must be chamber or fitted", line);
                     },
                     [](const RunConfig &c) {
                       return std::optional<std::string>(c.plan.geometry.mode == GeometryMode::build_chamber ? "chamber"
                                                                                                           : "fitted");
                     }});
        v.push_back({"mesh", "plate", true, "required, x0 y0 z0 x1 y1 z1",
                     [](RunConfig &c, const std::string &s, int line) {
                       c.plan.geometry.base_plate = parse_box(s, line, "[mesh].plate");
                     },
                     [](const RunConfig &c) { return std::optional<std::string>(fmt_box(c.plan.geometry.base_plate)); }});
        v.push_back({"mesh", "chamber", false, "required in chamber mode, x0 y0 z0 x1 y1 z1",
                     [](RunConfig &c, const std::string &s, int line) {
                       c.plan.geometry.chamber = parse_box(s, line, "[mesh].chamber");
                     },
                     [](const RunConfig &c) -> std::optional<std::string> {
                       if (c.plan.geometry.mode != GeometryMode::build_chamber)
                         return std::nullopt;
                       return fmt_box(c.plan.geometry.chamber);
                     }});
        v.push_back({"mesh", "part", false, "required in fitted mode, boxes separated by ';'",
                     [](RunConfig &c, const std::string &s, int line) {
                       c.plan.geometry.part.clear();
                       for (const auto &b : split_list(s))
                         c.plan.geometry.part.push_back(parse_box(b, line, "[mesh].part"));
                     },
                     [](const RunConfig &c) -> std::optional<std::string> {
                       if (c.plan.geometry.mode != GeometryMode::boundary_fitted)
                         return std::nullopt;
                       std::string s;
                       for (const auto &b : c.plan.geometry.part)
                         s += (s.empty() ? "" : " ; ") + fmt_box(b);
                       return s;
                     }});
        v.push_back(quantity("mesh", "h_powder", Dim::length, true, "required, layer thickness",
                             [](auto &c) -> auto & { return c.process.mesh.h_powder; }));
        v.push_back(integer("mesh", "n_refine", false, "0", [](auto &c) -> auto & { return c.process.mesh.n_refine; }));
        v.push_back(quantity("mesh", "h_coarse", Dim::length, false, "h_powder * 2^n_refine",
                             [](auto &c) -> auto & { return c.process.mesh.h_coarse; }));
        v.push_back(integer("mesh", "extra_refinement", false, "0",
                            [](auto &c) -> auto & { return c.process.mesh.extra_refinement; }));
        v.push_back(quantity("mesh", "d_haz_layers", Dim::none, false, "4",
                             [](auto &c) -> auto & { return c.process.mesh.d_haz_layers; }));
        v.push_back(quantity("mesh", "r_coarsen", Dim::none, false, "0.9",
                             [](auto &c) -> auto & { return c.process.mesh.r_coarsen; }));
        v.push_back(boolean("mesh", "dirichlet_bottom", "true",
                            [](auto &c) -> auto & { return c.process.mesh.dirichlet_bottom; }));
        // solver
        v.push_back(quantity("solver", "newton_tol", Dim::none, false, "1e-8",
                             [](auto &c) -> auto & { return c.solver.newton_tol; }));
        v.push_back(integer("solver", "newton_max_iter", false, "20",
                            [](auto &c) -> auto & { return c.solver.newton_max_iter; }));
        v.push_back(quantity("solver", "krylov_tol", Dim::none, false, "1e-10",
                             [](auto &c) -> auto & { return c.solver.krylov_tol; }));
        v.push_back(integer("solver", "krylov_max_iter", false, "2000",
                            [](auto &c) -> auto & { return c.solver.krylov_max_iter; }));
        v.push_back({"solver", "preconditioner", false, "diagonal (none, diagonal, ilu)",
                     [](RunConfig &c, const std::string &s, int line) {
                       const auto t = trim(s);
                       if (t == "none")
                         c.solver.preconditioner = Preconditioner::none;
                       else if (t == "diagonal")
                         c.solver.preconditioner = Preconditioner::diagonal;
                       else if (t == "ilu")
                         c.solver.preconditioner = Preconditioner::ilu;
                       else
                         throw ConfigError("[solver].preconditioner must be none, diagonal or ilu", line);
                     },
                     [](const RunConfig &c) {
                       const char *n[] = {"none", "diagonal", "ilu"};
                       return std::optional<std::string>(n[int(c.solver.preconditioner)]);
                     }});
        v.push_back(integer("solver", "explicit_cooldown_steps", false, "1000",
                            [](auto &c) -> auto & { return c.solver.explicit_cooldown_steps; }));
        v.push_back(quantity("solver", "dt_implicit", Dim::time, false, "2e-2 s",
                             [](auto &c) -> auto & { return c.solver.dt_implicit; }));
        v.push_back(quantity("solver", "safety_factor", Dim::none, false, "0.4",
                             [](auto &c) -> auto & { return c.solver.safety_factor; }));
        v.push_back(integer("solver", "power_iterations", false, "200",
                            [](auto &c) -> auto & { return c.solver.power_iterations; }));
        v.push_back(quantity("solver", "power_tol", Dim::none, false, "1e-6",
                             [](auto &c) -> auto & { return c.solver.power_tol; }));
        v.push_back(integer("solver", "max_halvings", false, "3",
                            [](auto &c) -> auto & { return c.solver.max_halvings; }));
        v.push_back(integer("solver", "lanes", false, "4 (1, 2, 4 or 8)",
                            [](auto &c) -> auto & { return c.process.n_lanes; }));
        // schedule
        v.push_back(integer("schedule", "layers", true, "required", [](auto &c) -> auto & { return c.plan.n_layers; }));
        v.push_back(quantity("schedule", "t_cool", Dim::time, true, "required, dwell after each layer",
                             [](auto &c) -> auto & { return c.plan.t_cool; }));
        v.push_back({"schedule", "section", false, "chamber footprint or part boxes, rectangles x0 y0 x1 y1 separated by ';'",
                     [](RunConfig &c, const std::string &s, int line) {
                       std::vector<Rect> r;
                       for (const auto &t : split_list(s))
                         r.push_back(parse_rect(t, line, "[schedule].section"));
                       c.section = r;
                     },
                     [](const RunConfig &c) -> std::optional<std::string> {
                       if (!c.section)
                         return std::nullopt;
                       std::string s;
                       for (const auto &r : *c.section)
                         s += (s.empty() ? "" : " ; ") + fmt_rect(r);
                       return s;
                     }});
        return v;
      }();
      return k;
    }

    const std::vector<std::string> section_order = {"material", "laser", "mesh", "solver", "schedule"};

    /// cross-sections of a fitted part, one per layer
    std::vector<std::vector<Rect>>
    fitted_sections(const PartGeometry &g, int n_layers, double h_powder)
    {
      std::vector<std::vector<Rect>> out;
      for (int k = 0; k < n_layers; ++k)
        {
          const double      z = g.base_plate.hi.z + (k + 0.5) * h_powder;
          std::vector<Rect> s;
          for (const auto &b : g.part)
            if (b.lo.z < z && z < b.hi.z)
              s.push_back({{b.lo.x, b.lo.y}, {b.hi.x, b.hi.y}});
          if (s.empty())
            throw ConfigError("layer " + std::to_string(k) + " has no part cross-section");
          out.push_back(s);
        }
      return out;
    }
  } // namespace

  RunConfig
  parse_config(const std::string &text)
  {
    RunConfig                                c;
    std::string                              section;
    std::set<std::string>                    seen;
    std::map<std::string, int>               line_of;
    bool                                     h_coarse_given = false;
    std::istringstream                       in(text);
    std::string                              raw;
    int                                      line = 0;
    while (std::getline(in, raw))
      {
        ++line;
        auto hash = raw.find('#');
        const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty())
          continue;
        if (s.front() == '[')
          {
            if (s.back() != ']')
              throw ConfigError("malformed section header '" + s + "'", line);
            section = trim(s.substr(1, s.size() - 2));
            bool known = false;
            for (const auto &n : section_order)
              known |= n == section;
            if (!known)
              throw ConfigError("unknown section [" + section + "]", line);
            continue;
          }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
          throw ConfigError("expected 'key = value', got '" + s + "'", line);
        if (section.empty())
          throw ConfigError("key outside of a section", line);
        const std::string name  = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        const Key        *key   = nullptr;
        for (const auto &k : keys())
          if (k.section == section && k.name == name)
            key = &k;
        if (!key)
          throw ConfigError("unknown key [" + section + "]." + name, line);
        const std::string full = "[" + section + "]." + name;
        if (!seen.insert(full).second)
          throw ConfigError("duplicate key " + full, line);
        key->set(c, value, line);
        line_of[full]   = line;
        h_coarse_given |= full == "[mesh].h_coarse";
      }
    for (const auto &k : keys())
      if (k.required && !seen.count("[" + k.section + "]." + k.name))
        throw ConfigError("missing required key [" + k.section + "]." + k.name);
    const bool chamber = c.plan.geometry.mode == GeometryMode::build_chamber;
    if (chamber && !seen.count("[mesh].chamber"))
      throw ConfigError("missing required key [mesh].chamber");
    if (!chamber && !seen.count("[mesh].part"))
      throw ConfigError("missing required key [mesh].part");
    if (!h_coarse_given)
      c.process.mesh.h_coarse = std::ldexp(c.process.mesh.h_powder, c.process.mesh.n_refine);
    c.process.physics.source.h_powder = c.process.mesh.h_powder;

    auto at = [&](const std::string &key) {
      auto it = line_of.find(key);
      return it == line_of.end() ? 0 : it->second;
    };
    if (c.plan.n_layers < 0)
      throw ConfigError("[schedule].layers must not be negative", at("[schedule].layers"));
    if (!(c.plan.t_cool >= 0.0))
      throw ConfigError("[schedule].t_cool must not be negative", at("[schedule].t_cool"));
    if (!(c.plan.hatch.speed > 0.0))
      throw ConfigError("[laser].speed must be positive", at("[laser].speed"));
    if (!(c.plan.hatch.power >= 0.0))
      throw ConfigError("[laser].power must not be negative", at("[laser].power"));
    if (!(c.plan.hatch.spacing > 0.0))
      throw ConfigError("[laser].hatch_spacing must be positive", at("[laser].hatch_spacing"));
    if (!(c.process.physics.source.radius > 0.0))
      throw ConfigError("[laser].radius must be positive", at("[laser].radius"));
    if (c.process.n_lanes != 1 && c.process.n_lanes != 2 && c.process.n_lanes != 4 && c.process.n_lanes != 8)
      throw ConfigError("[solver].lanes must be 1, 2, 4 or 8", at("[solver].lanes"));
    try
      {
        rotated_hatch(c.plan.hatch, c.plan.rotation_step_deg, 1);
        c.process.mesh.validate();
        c.process.physics.material.validate();
        c.process.physics.boundary.validate();
        c.solver.validate();
      }
    catch (const ConfigError &e)
      {
        // blame the last line naming a key from the message, else the last
        // key of the section the message mentions
        const std::string msg = e.what();
        int               by_key = 0, by_section = 0;
        for (const auto &[full, l] : line_of)
          {
            const auto dot  = full.find("].");
            const auto name = full.substr(dot + 2), sec = full.substr(1, dot - 1);
            if (msg.find(name) != std::string::npos)
              by_key = std::max(by_key, l);
            if (msg.find(sec) != std::string::npos)
              by_section = std::max(by_section, l);
          }
        throw ConfigError(msg, by_key ? by_key : by_section);
      }

    if (c.section)
      c.plan.sections = {*c.section};
    else if (chamber)
      {
        const auto &b   = c.plan.geometry.chamber;
        c.plan.sections = {{{{b.lo.x, b.lo.y}, {b.hi.x, b.hi.y}}}};
      }
    else
      c.plan.sections = fitted_sections(c.plan.geometry, c.plan.n_layers, c.process.mesh.h_powder);
    return c;
  }

  std::string
  serialize_config(const RunConfig &config)
  {
    std::ostringstream out;
    for (const auto &sec : section_order)
      {
        out << "[" << sec << "]\n";
        for (const auto &k : keys())
          if (k.section == sec)
            if (auto v = k.get(config))
              out << k.name << " = " << *v << "\n";
        out << "\n";
      }
    return out.str();
  }

  std::string
  config_reference()
  {
    std::ostringstream out;
    for (const auto &sec : section_order)
      {
        out << "[" << sec << "]\n";
        for (const auto &k : keys())
          if (k.section == sec)
            out << "# " << k.name << ": " << k.doc << "\n";
        out << "\n";
      }
    return out.str();
  }

  ScanPath
  parse_scanpath(const std::string &text)
  {
    ScanPath                 path;
    std::optional<LayerPath> open;
    std::istringstream       in(text);
    std::string              raw;
    int                      line = 0;
    auto named = [&](const std::vector<std::string> &tok, std::size_t from, const std::vector<std::string> &names) {
      std::map<std::string, std::string> kv;
      for (std::size_t i = from; i < tok.size(); ++i)
        {
          const auto eq = tok[i].find('=');
          if (eq == std::string::npos)
            throw ConfigError("expected name=value, got '" + tok[i] + "'", line);
          const auto n = tok[i].substr(0, eq);
          bool       ok = false;
          for (const auto &m : names)
            ok |= m == n;
          if (!ok)
            throw ConfigError("unknown field '" + n + "'", line);
          if (!kv.emplace(n, tok[i].substr(eq + 1)).second)
            throw ConfigError("duplicate field '" + n + "'", line);
        }
      for (const auto &m : names)
        if (!kv.count(m))
          throw ConfigError("missing field '" + m + "='", line);
      return kv;
    };
    auto need_layer = [&](const std::string &what) {
      if (!open)
        throw ConfigError(what + " outside of a layer", line);
    };
    while (std::getline(in, raw))
      {
        ++line;
        const auto hash = raw.find('#');
        const auto tok  = split_ws(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (tok.empty())
          continue;
        const auto &cmd = tok[0];
        if (cmd == "layer")
          {
            if (open)
              throw ConfigError("layer " + std::to_string(open->index) + " not closed by 'cool'", line);
            if (tok.size() != 3)
              throw ConfigError("expected 'layer <k> z=<height>'", line);
            LayerPath l;
            l.index = int(parse_integer(tok[1], line, "layer index"));
            if (l.index < 0)
              throw ConfigError("negative layer index", line);
            if (!path.layers.empty() && l.index <= path.layers.back().index)
              throw ConfigError("layer indices must be strictly increasing", line);
            l.z_top = parse_quantity(named(tok, 2, {"z"}).at("z"), Dim::length, line, "z");
            open    = l;
          }
        else if (cmd == "track")
          {
            need_layer("track");
            if (tok.size() != 7)
              throw ConfigError("expected 'track <x0> <y0> <x1> <y1> v=<speed> P=<power>'", line);
            const auto kv = named(tok, 5, {"v", "P"});
            Segment    s;
            s.start = {parse_quantity(tok[1], Dim::length, line, "x0"), parse_quantity(tok[2], Dim::length, line, "y0")};
            s.end   = {parse_quantity(tok[3], Dim::length, line, "x1"), parse_quantity(tok[4], Dim::length, line, "y1")};
            s.speed = parse_quantity(kv.at("v"), Dim::speed, line, "v");
            s.power = parse_quantity(kv.at("P"), Dim::power, line, "P");
            if (!(s.speed > 0.0))
              throw ConfigError("scan speed must be positive", line);
            if (!(s.power >= 0.0))
              throw ConfigError("power must not be negative", line);
            open->segments.push_back(s);
          }
        else if (cmd == "hatch")
          {
            need_layer("hatch");
            if (tok.size() != 10 || tok[1] != "box")
              throw ConfigError("expected 'hatch box <x0> <y0> <x1> <y1> dh=<m> dir=<x|y> v=<speed> P=<power>'", line);
            const auto  kv = named(tok, 6, {"dh", "dir", "v", "P"});
            Rect        r{{parse_quantity(tok[2], Dim::length, line, "x0"), parse_quantity(tok[3], Dim::length, line, "y0")},
                          {parse_quantity(tok[4], Dim::length, line, "x1"), parse_quantity(tok[5], Dim::length, line, "y1")}};
            HatchParams h;
            h.spacing = parse_quantity(kv.at("dh"), Dim::length, line, "dh");
            if (kv.at("dir") == "x")
              h.direction = HatchDirection::x;
            else if (kv.at("dir") == "y")
              h.direction = HatchDirection::y;
            else
              throw ConfigError("dir must be x or y", line);
            h.speed = parse_quantity(kv.at("v"), Dim::speed, line, "v");
            h.power = parse_quantity(kv.at("P"), Dim::power, line, "P");
            if (!(h.speed > 0.0))
              throw ConfigError("scan speed must be positive", line);
            try
              {
                const auto l = generate_hatch({r}, h, open->z_top, open->index, 0.0);
                open->segments.insert(open->segments.end(), l.segments.begin(), l.segments.end());
              }
            catch (const ConfigError &e)
              {
                throw ConfigError(e.what(), line);
              }
          }
        else if (cmd == "cool")
          {
            need_layer("cool");
            if (tok.size() != 2)
              throw ConfigError("expected 'cool <seconds>'", line);
            open->cool_time = parse_quantity(tok[1], Dim::time, line, "cool");
            if (!(open->cool_time >= 0.0))
              throw ConfigError("negative cool-down time", line);
            path.layers.push_back(*open);
            open.reset();
          }
        else
          throw ConfigError("unknown directive '" + cmd + "'", line);
      }
    if (open)
      throw ConfigError("layer " + std::to_string(open->index) + " not closed by 'cool'", line);
    return path;
  }

  std::string
  serialize_scanpath(const ScanPath &path)
  {
    std::ostringstream out;
    for (const auto &l : path.layers)
      {
        out << "layer " << l.index << " z=" << fmt(l.z_top) << "\n";
        for (const auto &s : l.segments)
          out << "track " << fmt(s.start.x) << " " << fmt(s.start.y) << " " << fmt(s.end.x) << " " << fmt(s.end.y)
              << " v=" << fmt(s.speed) << " P=" << fmt(s.power) << "\n";
        out << "cool " << fmt(l.cool_time) << "\n";
      }
    return out.str();
  }

  std::string
  read_file(const std::string &path)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError("cannot open " + path);
    std::ostringstream s;
    s << in.rdbuf();
    if (in.bad())
      throw IoError("error reading " + path);
    return s.str();
  }

  void
  write_file(const std::string &path, const std::string &content)
  {
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw IoError("cannot open " + path + " for writing");
    out << content;
    out.close();
    if (!out)
      throw IoError("error writing " + path);
  }

  MaterialState
  classify_cell(const Forest &forest, const ThermalState &state, std::size_t active_cell, const MaterialParams &material)
  {
    double T = 0.0;
    for (auto d : forest.dofs().cell_dofs[active_cell])
      T += state.T[d];
    T /= 8.0;
    if (T > material.T_solidus)
      return MaterialState::mushy_or_melt;
    return cell_mean_history(state.history, active_cell) >= 0.5 ? MaterialState::solid : MaterialState::powder;
  }

  namespace
  {
    class Appended
    {
    public:
      template <typename T>
      std::size_t
      add(const std::vector<T> &v)
      {
        const std::size_t   offset = bytes_.size();
        const std::uint64_t n      = v.size() * sizeof(T);
        append(&n, sizeof n);
        append(v.data(), n);
        return offset;
      }
      const std::string &
      bytes() const
      {
        return bytes_;
      }

    private:
      void
      append(const void *p, std::size_t n)
      {
        bytes_.append(static_cast<const char *>(p), n);
      }
      std::string bytes_;
    };
  } // namespace

  void
  export_snapshot(const std::string &file, const Forest &forest, const ThermalState &state, const MaterialParams &material)
  {
    static_assert(std::endian::native == std::endian::little, "snapshot writer assumes a little-endian host");
    if (state.T.epoch != forest.epoch() || state.history.epoch != forest.epoch())
      throw StaleDataError("snapshot fields do not match the mesh");
    const auto                  &dm = forest.dofs();
    std::vector<double>          points, temperature(state.T.values);
    std::unordered_map<std::uint64_t, std::int64_t> extra;
    for (const auto &p : dm.dof_position)
      {
        const auto x = forest.to_physical(p);
        points.insert(points.end(), {x.x, x.y, x.z});
      }
    std::vector<std::int64_t> conn, offsets;
    std::vector<std::uint8_t> types, active;
    std::vector<double>       rc;
    std::vector<std::int32_t> mstate, level;
    const auto               &cells = forest.cells();
    for (std::size_t ci = 0; ci < cells.size(); ++ci)
      {
        const Cell  &c   = cells[ci];
        const Coord  sz  = forest.cell_size(c.level);
        const auto   ai  = forest.active_index_of(ci);
        // VTK hexahedron corner order
        static constexpr int order[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                            {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
        for (const auto &o : order)
          {
            const LatticePoint p{c.anchor.x + o[0] * sz, c.anchor.y + o[1] * sz, c.anchor.z + o[2] * sz};
            const auto         key = vertex_key(p);
            auto               it  = dm.dof_of_vertex.find(key);
            if (it != dm.dof_of_vertex.end())
              {
                conn.push_back(it->second);
                continue;
              }
            auto [e, fresh] = extra.emplace(key, std::int64_t(points.size() / 3));
            if (fresh)
              {
                const auto x = forest.to_physical(p);
                points.insert(points.end(), {x.x, x.y, x.z});
                temperature.push_back(std::nan(""));
              }
            conn.push_back(e->second);
          }
        offsets.push_back(std::int64_t(conn.size()));
        types.push_back(12);
        level.push_back(c.level);
        if (ai >= 0)
          {
            active.push_back(1);
            rc.push_back(cell_mean_history(state.history, std::size_t(ai)));
            mstate.push_back(int(classify_cell(forest, state, std::size_t(ai), material)));
          }
        else
          {
            active.push_back(0);
            rc.push_back(0.0);
            mstate.push_back(int(MaterialState::inactive));
          }
      }

    Appended          data;
    const std::size_t o_T     = data.add(temperature);
    const std::size_t o_rc    = data.add(rc);
    const std::size_t o_state = data.add(mstate);
    const std::size_t o_level = data.add(level);
    const std::size_t o_act   = data.add(active);
    const std::size_t o_pts   = data.add(points);
    const std::size_t o_conn  = data.add(conn);
    const std::size_t o_off   = data.add(offsets);
    const std::size_t o_type  = data.add(types);

    auto arr = [](const char *type, const char *name, std::size_t offset, int comps = 1) {
      std::string s = std::string("        <DataArray type=\"") + type + "\" Name=\"" + name + "\"";
      if (comps > 1)
        s += " NumberOfComponents=\"" + std::to_string(comps) + "\"";
      return s + " format=\"appended\" offset=\"" + std::to_string(offset) + "\"/>\n";
    };
    std::ostringstream x;
    x << "<?xml version=\"1.0\"?>\n"
      << "<VTKFile type=\"UnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt64\">\n"
      << "  <UnstructuredGrid>\n"
      << "    <Piece NumberOfPoints=\"" << points.size() / 3 << "\" NumberOfCells=\"" << cells.size() << "\">\n"
      << "      <PointData Scalars=\"temperature\">\n"
      << arr("Float64", "temperature", o_T) << "      </PointData>\n"
      << "      <CellData>\n"
      << arr("Float64", "consolidated_fraction", o_rc) << arr("Int32", "material_state", o_state)
      << arr("Int32", "refinement_level", o_level) << arr("UInt8", "active", o_act) << "      </CellData>\n"
      << "      <Points>\n"
      << arr("Float64", "Points", o_pts, 3) << "      </Points>\n"
      << "      <Cells>\n"
      << arr("Int64", "connectivity", o_conn) << arr("Int64", "offsets", o_off) << arr("UInt8", "types", o_type)
      << "      </Cells>\n"
      << "    </Piece>\n"
      << "  </UnstructuredGrid>\n"
      << "  <AppendedData encoding=\"raw\">\n_" << data.bytes() << "\n  </AppendedData>\n"
      << "</VTKFile>\n";
    write_file(file, x.str());
  }

  double
  throughput(double n_dofs, double seconds_per_step, int cores)
  {
    if (!(seconds_per_step > 0.0) || cores < 1)
      return 0.0;
    return n_dofs / (seconds_per_step * cores);
  }

  double
  parallel_efficiency(double t_ref, int n_ref, double t, int n)
  {
    if (!(t > 0.0) || n < 1)
      throw ConfigError("parallel efficiency needs a positive time and core count");
    return t_ref * n_ref / (t * n);
  }

  RunMetrics
  collect_metrics(const BuildResult &result, int workers)
  {
    RunMetrics m;
    m.workers       = workers;
    m.total_seconds = result.total_seconds;
    double scan = 0, cool = 0, amr = 0, out = 0;
    for (const auto &l : result.layers)
      {
        LayerRunMetrics r;
        r.layer             = l.layer;
        r.n_dofs            = l.n_dofs;
        r.n_steps           = l.scan_steps + l.cooldown_explicit_steps + l.cooldown_implicit_steps;
        r.mean_step_seconds = l.scan_steps ? l.scan_seconds / double(l.scan_steps) : 0.0;
        r.throughput        = throughput(double(l.n_dofs), r.mean_step_seconds, workers);
        r.wall_seconds      = l.wall_seconds;
        if (l.wall_seconds > 0.0)
          {
            r.scan_fraction     = l.scan_seconds / l.wall_seconds;
            r.cooldown_fraction = l.cooldown_seconds / l.wall_seconds;
            r.amr_fraction      = l.amr_seconds / l.wall_seconds;
            r.output_fraction   = l.output_seconds / l.wall_seconds;
          }
        scan += l.scan_seconds;
        cool += l.cooldown_seconds;
        amr += l.amr_seconds;
        out += l.output_seconds;
        m.layers.push_back(r);
      }
    if (m.total_seconds > 0.0)
      {
        m.scan_fraction     = scan / m.total_seconds;
        m.cooldown_fraction = cool / m.total_seconds;
        m.amr_fraction      = amr / m.total_seconds;
        m.output_fraction   = out / m.total_seconds;
      }
    return m;
  }

  std::string
  report_metrics(const RunMetrics &m, const RunMetrics *baseline)
  {
    if (baseline && baseline->layers.size() != m.layers.size())
      throw ConfigError("metrics have " + std::to_string(m.layers.size()) + " layers, baseline has " +
                        std::to_string(baseline->layers.size()));
    std::ostringstream out;
    out << "layer,workers,n_dofs,n_steps,mean_step_s,throughput_dofs_per_s_core,wall_s,scan_frac,cooldown_frac,amr_frac,"
           "output_frac";
    if (baseline)
      out << ",efficiency";
    out << "\n";
    for (std::size_t i = 0; i < m.layers.size(); ++i)
      {
        const auto &r = m.layers[i];
        out << r.layer << "," << m.workers << "," << r.n_dofs << "," << r.n_steps << "," << fmt(r.mean_step_seconds) << ","
            << fmt(r.throughput) << "," << fmt(r.wall_seconds) << "," << fmt(r.scan_fraction) << ","
            << fmt(r.cooldown_fraction) << "," << fmt(r.amr_fraction) << "," << fmt(r.output_fraction);
        if (baseline)
          out << ","
              << fmt(parallel_efficiency(baseline->layers[i].wall_seconds, baseline->workers, r.wall_seconds, m.workers));
        out << "\n";
      }
    std::size_t   dofs  = 0;
    std::uint64_t steps = 0;
    for (const auto &r : m.layers)
      {
        dofs = std::max(dofs, r.n_dofs);
        steps += r.n_steps;
      }
    out << "total," << m.workers << "," << dofs << "," << steps << ",,," << fmt(m.total_seconds) << ","
        << fmt(m.scan_fraction) << "," << fmt(m.cooldown_fraction) << "," << fmt(m.amr_fraction) << ","
        << fmt(m.output_fraction);
    if (baseline)
      out << "," << fmt(parallel_efficiency(baseline->total_seconds, baseline->workers, m.total_seconds, m.workers));
    out << "\n";
    return out.str();
  }
} // namespace pbf
