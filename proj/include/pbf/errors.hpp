#ifndef PBF_ERRORS_HPP
#define PBF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pbf
{
  struct Error : std::runtime_error
  {
    using std::runtime_error::runtime_error;
  };

  /// Invalid configuration, geometry or input file. Carries the 1-based line
  /// number when the problem comes from a text file (0 otherwise).
  struct ConfigError : Error
  {
    ConfigError(const std::string &what, int line_ = 0)
      : Error(line_ > 0 ? "line " + std::to_string(line_) + ": " + what : what)
      , line(line_)
    {}
    int line;
  };

  /// Field data tagged with a mesh epoch that no longer matches the forest.
  struct StaleDataError : Error
  {
    using Error::Error;
  };

  /// Krylov or Newton failure.
  struct SolverError : Error
  {
    using Error::Error;
  };

  /// Non-finite temperatures in the explicit scheme.
  struct InstabilityError : Error
  {
    using Error::Error;
  };

  /// Time query outside the scan schedule.
  struct ScheduleError : Error
  {
    using Error::Error;
  };

  /// File could not be read or written.
  struct IoError : Error
  {
    using Error::Error;
  };

  /// Dense oracle invoked on a problem larger than it is meant for.
  struct SizeGuardError : Error
  {
    using Error::Error;
  };
} // namespace pbf

#endif
