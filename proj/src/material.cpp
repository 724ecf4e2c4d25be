#include <pbf/errors.hpp>
#include <pbf/material.hpp>

namespace pbf
{
  void
  MaterialParams::validate() const
  {
    if (!(k_powder > 0.0 && k_melt > 0.0 && k_solid > 0.0))
      throw ConfigError("material conductivities must be positive");
    if (!(density > 0.0 && specific_heat > 0.0))
      throw ConfigError("material density and specific heat must be positive");
    if (!(T_solidus > 0.0 && T_solidus < T_liquidus))
      throw ConfigError("material requires 0 < T_solidus < T_liquidus");
  }
} // namespace pbf
