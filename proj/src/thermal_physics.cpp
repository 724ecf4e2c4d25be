#include <pbf/errors.hpp>
#include <pbf/thermal_physics.hpp>

#include <string>

namespace pbf
{
  double
  LayerPath::scan_duration() const
  {
    double t = 0.0;
    for (const auto &s : segments)
      t += s.duration();
    return t;
  }

  double
  LayerPath::path_length() const
  {
    double l = 0.0;
    for (const auto &s : segments)
      l += s.length();
    return l;
  }

  double
  ScanPath::total_time() const
  {
    double t = 0.0;
    for (const auto &l : layers)
      t += l.scan_duration() + l.cool_time;
    return t;
  }

  void
  ScanPath::validate() const
  {
    for (std::size_t i = 0; i < layers.size(); ++i)
      {
        const auto &l = layers[i];
        if (i > 0 && l.index <= layers[i - 1].index)
          throw ConfigError("layer indices must be strictly increasing (layer " + std::to_string(l.index) + ")");
        if (l.cool_time < 0.0)
          throw ConfigError("negative cool time in layer " + std::to_string(l.index));
        for (const auto &s : l.segments)
          {
            if (!(s.speed > 0.0))
              throw ConfigError("scan speed must be positive in layer " + std::to_string(l.index));
            if (s.power < 0.0)
              throw ConfigError("laser power must be non-negative in layer " + std::to_string(l.index));
          }
      }
  }

  BeamState
  beam_state(const LayerPath &layer, double t)
  {
    BeamState b;
    b.position.z = layer.z_top;
    double t0    = 0.0;
    for (const auto &s : layer.segments)
      {
        const double d = s.duration();
        if (t >= t0 && t < t0 + d)
          {
            const double f = (t - t0) / d;
            b.position.x   = s.start.x + f * (s.end.x - s.start.x);
            b.position.y   = s.start.y + f * (s.end.y - s.start.y);
            b.power        = s.power;
            b.active       = s.power > 0.0;
            return b;
          }
        t0 += d;
      }
    if (!layer.segments.empty())
      {
        b.position.x = layer.segments.back().end.x;
        b.position.y = layer.segments.back().end.y;
      }
    return b;
  }

  BeamState
  beam_state(const ScanPath &path, double t)
  {
    const double total = path.total_time();
    if (!(t >= 0.0) || t > total * (1.0 + 1e-12))
      throw ScheduleError("time " + std::to_string(t) + " s outside the build schedule [0, " + std::to_string(total) + "]");
    double t0 = 0.0;
    for (std::size_t i = 0; i < path.layers.size(); ++i)
      {
        const auto  &l   = path.layers[i];
        const double len = l.scan_duration() + l.cool_time;
        if (t < t0 + len || i + 1 == path.layers.size())
          return beam_state(l, t - t0);
        t0 += len;
      }
    return {};
  }

  void
  BoundaryParams::validate() const
  {
    if (!(emissivity >= 0.0 && emissivity <= 1.0))
      throw ConfigError("emissivity must lie in [0, 1]");
    if (!(T_ambient > 0.0 && T_boiling > 0.0 && T_h0 > 0.0))
      throw ConfigError("boundary temperatures must be positive");
    if (!(T_max_offset > 0.0))
      throw ConfigError("T_max must exceed the boiling temperature");
    if (!(C_P > 0.0 && C_T > 0.0 && C_M > 0.0 && h_v > 0.0 && stefan_boltzmann > 0.0))
      throw ConfigError("evaporation constants must be positive");
  }
} // namespace pbf
