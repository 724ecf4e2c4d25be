#ifndef PBF_MATERIAL_HPP
#define PBF_MATERIAL_HPP

#include <pbf/lane.hpp>

#include <cstdint>
#include <vector>

namespace pbf
{
  /// Single-phase constants of the powder / melt / solid material law.
  struct MaterialParams
  {
    double k_powder      = 0.2;  // W/m/K
    double k_melt        = 20.0; // W/m/K
    double k_solid       = 20.0; // W/m/K
    double density       = 7430.0;
    double specific_heat = 965.0;
    double T_solidus     = 1500.0;
    double T_liquidus    = 1900.0;

    double
    volumetric_capacity() const
    {
      return density * specific_heat;
    }

    /// Throws ConfigError when an invariant is violated.
    void
    validate() const;

    bool
    operator==(const MaterialParams &) const = default;
  };

  /// Consolidated fraction r_c per quadrature point of every active cell,
  /// stored cell-major: value of point q of active cell c at [8 * c + q].
  struct HistoryField
  {
    std::vector<double> r_c;
    std::uint64_t       epoch = 0;

    bool
    operator==(const HistoryField &) const = default;
  };

  template <typename V>
  struct PhaseFractions
  {
    V powder;
    V melt;
    V solid;
  };

  /// g(T): zero below solidus, one above liquidus, linear in between. The
  /// middle branch owns both interval endpoints.
  template <typename V>
  inline V
  liquid_fraction(const V &T, const MaterialParams &p)
  {
    const V zero(0.0), one(1.0);
    const V Ts(p.T_solidus), Tl(p.T_liquidus);
    const V below = masked_select<Compare::less>(T, Ts, one, zero);
    const V above = masked_select<Compare::greater>(T, Tl, one, zero);
    const V mushy = (one - below) * (one - above);
    return below * zero + mushy * ((T - Ts) / (Tl - Ts)) + above * one;
  }

  /// Running maximum of the liquid fraction. Initially consolidated points
  /// carry r_c = 1 and therefore never change.
  template <typename V>
  inline V
  update_consolidated(const V &r_c_old, const V &T, const MaterialParams &p)
  {
    const V g = liquid_fraction(T, p);
    return masked_select<Compare::greater>(g, r_c_old, g, r_c_old);
  }

  template <typename V>
  inline PhaseFractions<V>
  phase_fractions(const V &T, const V &r_c, const MaterialParams &p)
  {
    const V g = liquid_fraction(T, p);
    V       solid = r_c - g;
    // only a round-off sized negative solid fraction is clipped
    const V zero(0.0);
    const V clipped = masked_select<Compare::less>(solid, V(-1e-14), solid, zero);
    solid           = masked_select<Compare::less>(solid, zero, clipped, solid);
    return {V(1.0) - r_c, g, solid};
  }

  template <typename V>
  inline V
  conductivity(const V &T, const V &r_c, const MaterialParams &p)
  {
    const auto f = phase_fractions(T, r_c, p);
    return f.powder * p.k_powder + f.melt * p.k_melt + f.solid * p.k_solid;
  }

  /// dk/dT with r_c frozen. Zero at the interval endpoints and outside.
  template <typename V>
  inline V
  conductivity_derivative(const V &T, const V & /*r_c*/, const MaterialParams &p)
  {
    const V zero(0.0);
    const V slope((p.k_melt - p.k_solid) / (p.T_liquidus - p.T_solidus));
    const V below_liquidus = masked_select<Compare::less>(T, V(p.T_liquidus), slope, zero);
    return masked_select<Compare::greater>(T, V(p.T_solidus), below_liquidus, zero);
  }
} // namespace pbf

#endif
