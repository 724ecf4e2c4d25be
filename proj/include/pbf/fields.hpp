#ifndef PBF_FIELDS_HPP
#define PBF_FIELDS_HPP

#include <cstdint>
#include <vector>

namespace pbf
{
  /// Global vector of nodal values indexed by DoF, tagged with the mesh epoch
  /// it was built for.
  struct NodalField
  {
    std::vector<double> values;
    std::uint64_t       epoch = 0;

    std::size_t
    size() const
    {
      return values.size();
    }
    double &
    operator[](std::size_t i)
    {
      return values[i];
    }
    double
    operator[](std::size_t i) const
    {
      return values[i];
    }
    bool
    operator==(const NodalField &) const = default;
  };
} // namespace pbf

#endif
