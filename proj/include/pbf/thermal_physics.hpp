#ifndef PBF_THERMAL_PHYSICS_HPP
#define PBF_THERMAL_PHYSICS_HPP

#include <pbf/geometry.hpp>
#include <pbf/lane.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace pbf
{
  /// Straight laser track at constant speed and effective power.
  struct Segment
  {
    Point2 start;
    Point2 end;
    double speed = 1.0; // m/s
    double power = 0.0; // W

    double
    length() const
    {
      return std::hypot(end.x - start.x, end.y - start.y);
    }
    double
    duration() const
    {
      return length() / speed;
    }
    bool
    operator==(const Segment &) const = default;
  };

  /// Scan of one layer followed by a dwell. Segments are executed back to
  /// back; repositioning between them is instantaneous.
  struct LayerPath
  {
    int                  index = 0;
    double               z_top = 0.0; // height of the scanned surface (m)
    std::vector<Segment> segments;
    double               cool_time = 0.0; // s

    double
    scan_duration() const;
    double
    path_length() const;
    bool
    operator==(const LayerPath &) const = default;
  };

  struct ScanPath
  {
    std::vector<LayerPath> layers;

    /// Sum of scan durations and cool times over all layers.
    double
    total_time() const;
    /// Throws ConfigError if layer indices are not strictly increasing or a
    /// segment has non-positive speed or negative power.
    void
    validate() const;
    bool
    operator==(const ScanPath &) const = default;
  };

  struct BeamState
  {
    Point3 position;
    double power  = 0.0;
    bool   active = false;
  };

  /// Beam at time t measured from the start of the layer. Segment i owns
  /// [t_i, t_{i+1}); at the very end of the scan the beam rests on the last
  /// end point and is off. Any time inside the dwell is off.
  BeamState
  beam_state(const LayerPath &layer, double t);

  /// Beam at global time t, where layers follow each other with their dwell
  /// in between. Throws ScheduleError outside [0, total_time()].
  BeamState
  beam_state(const ScanPath &path, double t);

  struct HeatSourceParams
  {
    double radius   = 50e-6; // effective beam radius R (m)
    double h_powder = 40e-6; // layer thickness (m)

    bool
    operator==(const HeatSourceParams &) const = default;
  };

  /// Beyond this many radii from the beam axis the source is skipped; the
  /// neglected relative intensity is exp(-32).
  inline constexpr double source_cutoff_radii = 4.0;

  /// Cylindrical source: Gaussian in the layer plane, uniform over the
  /// current powder layer [z_top - h_powder, z_top].
  template <typename V>
  inline V
  volumetric_source(const V &x, const V &y, const V &z, const BeamState &beam, const HeatSourceParams &hs)
  {
    if (!beam.active || beam.power <= 0.0)
      return V(0.0);
    const double R2   = hs.radius * hs.radius;
    const double peak = 2.0 * beam.power / (std::numbers::pi * R2 * hs.h_powder);
    const V      dx   = x - beam.position.x;
    const V      dy   = y - beam.position.y;
    const V      q    = exp((dx * dx + dy * dy) * (-2.0 / R2)) * peak;
    const V      zero(0.0);
    const V      zbot(beam.position.z - hs.h_powder), ztop(beam.position.z);
    const V      inside_lo = masked_select<Compare::less>(z, zbot, zero, q);
    return masked_select<Compare::greater>(z, ztop, zero, inside_lo);
  }

  struct BoundaryParams
  {
    double emissivity      = 0.7;
    double stefan_boltzmann = 5.670374419e-8;
    double T_ambient       = 303.0;
    double T_boiling       = 3000.0;
    double C_P             = 54e3;    // Pa
    double C_T             = 50000.0; // K
    double C_M             = 0.001;   // K s^2 / m^2
    double h_v             = 6.0e6;   // J/kg
    double T_h0            = 663.0;   // K
    double T_max_offset    = 1000.0;  // clamp T_max = T_boiling + offset
    bool   radiation       = true;
    bool   evaporation     = true;

    double
    T_max() const
    {
      return T_boiling + T_max_offset;
    }
    void
    validate() const;
    bool
    operator==(const BoundaryParams &) const = default;
  };

  /// Outward radiative flux eps sigma (T^4 - T_ambient^4), W/m^2.
  template <typename V>
  inline V
  radiation_flux(const V &T, const BoundaryParams &bp)
  {
    const double Tinf  = bp.T_ambient;
    const double Tinf4 = (Tinf * Tinf) * (Tinf * Tinf);
    const V      T2    = T * T;
    return (T2 * T2 - Tinf4) * (bp.emissivity * bp.stefan_boltzmann);
  }

  /// Outward evaporative flux, W/m^2. Evaluated at [T] = min(T, T_max) and
  /// zero unless [T] exceeds the boiling temperature.
  template <typename V>
  inline V
  evaporation_flux(const V &T, const BoundaryParams &bp, double specific_heat)
  {
    const V Tc       = min(T, V(bp.T_max()));
    const V mass     = exp((V(1.0) / Tc - 1.0 / bp.T_boiling) * (-bp.C_T)) * (0.82 * bp.C_P) *
                   sqrt(V(bp.C_M) / Tc);
    const V enthalpy = (Tc - bp.T_h0) * specific_heat + bp.h_v;
    return masked_select<Compare::greater>(Tc, V(bp.T_boiling), mass * enthalpy, V(0.0));
  }

} // namespace pbf

#endif
