#ifndef PBF_GEOMETRY_HPP
#define PBF_GEOMETRY_HPP

#include <array>
#include <vector>

namespace pbf
{
  struct Point2
  {
    double x = 0.0;
    double y = 0.0;
    bool
    operator==(const Point2 &) const = default;
  };

  struct Point3
  {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    bool
    operator==(const Point3 &) const = default;
  };

  /// Axis-aligned box in meters, lo <= hi componentwise.
  struct Box
  {
    Point3 lo;
    Point3 hi;

    double
    volume() const
    {
      return (hi.x - lo.x) * (hi.y - lo.y) * (hi.z - lo.z);
    }
    bool
    operator==(const Box &) const = default;
  };

  /// Axis-aligned rectangle in a layer plane.
  struct Rect
  {
    Point2 lo;
    Point2 hi;
    bool
    operator==(const Rect &) const = default;
  };

  enum class GeometryMode
  {
    build_chamber,
    boundary_fitted
  };

  /// Meshed domain. The base plate is always meshed and starts consolidated.
  /// In build-chamber mode `chamber` is a box sitting on top of the base
  /// plate; in boundary-fitted mode `part` lists disjoint boxes whose union
  /// is the part above the plate.
  struct PartGeometry
  {
    GeometryMode     mode = GeometryMode::build_chamber;
    Box              base_plate;
    Box              chamber;
    std::vector<Box> part;

    bool
    operator==(const PartGeometry &) const = default;
  };
} // namespace pbf

#endif
