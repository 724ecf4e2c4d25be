#ifndef PBF_LANE_HPP
#define PBF_LANE_HPP

#include <array>
#include <cmath>
#include <cstddef>

namespace pbf
{
  /// Fixed-width group of scalars processed in lock-step, one per cell of a
  /// batch. Arithmetic is lane-wise; conditionals go through masked_select.
  template <int N>
  struct LaneValue
  {
    static_assert(N == 1 || N == 2 || N == 4 || N == 8, "unsupported lane count");
    static constexpr int n_lanes = N;

    std::array<double, N> v{};

    LaneValue() = default;
    LaneValue(double s) { v.fill(s); }

    double &
    operator[](int i)
    {
      return v[i];
    }
    double
    operator[](int i) const
    {
      return v[i];
    }

#define PBF_LANE_COMPOUND(op)                                   \
  LaneValue &operator op##=(const LaneValue & o)                \
  {                                                             \
    for (int i = 0; i < N; ++i)                                 \
      v[i] op## = o.v[i];                                       \
    return *this;                                               \
  }
    PBF_LANE_COMPOUND(+)
    PBF_LANE_COMPOUND(-)
    PBF_LANE_COMPOUND(*)
    PBF_LANE_COMPOUND(/)
#undef PBF_LANE_COMPOUND
  };

#define PBF_LANE_BINARY(op)                                          \
  template <int N>                                                   \
  inline LaneValue<N> operator op(LaneValue<N> a, const LaneValue<N> &b) \
  {                                                                  \
    for (int i = 0; i < N; ++i)                                      \
      a.v[i] = a.v[i] op b.v[i];                                     \
    return a;                                                        \
  }                                                                  \
  template <int N>                                                   \
  inline LaneValue<N> operator op(LaneValue<N> a, double b)          \
  {                                                                  \
    for (int i = 0; i < N; ++i)                                      \
      a.v[i] = a.v[i] op b;                                          \
    return a;                                                        \
  }                                                                  \
  template <int N>                                                   \
  inline LaneValue<N> operator op(double a, LaneValue<N> b)          \
  {                                                                  \
    for (int i = 0; i < N; ++i)                                      \
      b.v[i] = a op b.v[i];                                          \
    return b;                                                        \
  }
  PBF_LANE_BINARY(+)
  PBF_LANE_BINARY(-)
  PBF_LANE_BINARY(*)
  PBF_LANE_BINARY(/)
#undef PBF_LANE_BINARY

  template <int N>
  inline LaneValue<N>
  operator-(LaneValue<N> a)
  {
    for (int i = 0; i < N; ++i)
      a.v[i] = -a.v[i];
    return a;
  }

  enum class Compare
  {
    less,
    greater
  };

  /// Lane i receives t[i] where a[i] cmp b[i] holds, f[i] otherwise.
  template <Compare cmp, int N>
  inline LaneValue<N>
  masked_select(const LaneValue<N> &a,
                const LaneValue<N> &b,
                const LaneValue<N> &t,
                const LaneValue<N> &f)
  {
    LaneValue<N> r;
    for (int i = 0; i < N; ++i)
      {
        const bool c = cmp == Compare::less ? a.v[i] < b.v[i] : a.v[i] > b.v[i];
        r.v[i]       = c ? t.v[i] : f.v[i];
      }
    return r;
  }

  template <int N>
  inline LaneValue<N>
  min(LaneValue<N> a, const LaneValue<N> &b)
  {
    return masked_select<Compare::less>(b, a, b, a);
  }

  template <int N>
  inline LaneValue<N>
  max(LaneValue<N> a, const LaneValue<N> &b)
  {
    return masked_select<Compare::greater>(b, a, b, a);
  }

  template <int N>
  inline LaneValue<N>
  exp(LaneValue<N> a)
  {
    for (int i = 0; i < N; ++i)
      a.v[i] = std::exp(a.v[i]);
    return a;
  }

  template <int N>
  inline LaneValue<N>
  sqrt(LaneValue<N> a)
  {
    for (int i = 0; i < N; ++i)
      a.v[i] = std::sqrt(a.v[i]);
    return a;
  }

  // Scalar overloads so the same kernel text compiles for plain doubles.
  template <Compare cmp>
  inline double
  masked_select(double a, double b, double t, double f)
  {
    const bool c = cmp == Compare::less ? a < b : a > b;
    return c ? t : f;
  }

  inline double
  min(double a, double b)
  {
    return b < a ? b : a;
  }

  inline double
  max(double a, double b)
  {
    return b > a ? b : a;
  }

  inline double
  exp(double a)
  {
    return std::exp(a);
  }

  inline double
  sqrt(double a)
  {
    return std::sqrt(a);
  }
} // namespace pbf

#endif
