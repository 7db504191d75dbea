// SPDX-License-Identifier: Apache-2.0
//
// A double that tallies every +, -, * and / it takes part in. Instantiating the
// network templates with CountedReal gives an exact per-step arithmetic count.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Core>

#include "ccn/types.hpp"

namespace ccn {

enum class OpPhase : int { Forward = 0, Learning = 1, Other = 2 };

struct OpTally {
  std::array<std::uint64_t, 3> arithmetic{};
  std::array<std::uint64_t, 3> transcendental{};

  std::uint64_t total() const {
    return arithmetic[0] + arithmetic[1] + arithmetic[2];
  }
};

namespace detail {
inline thread_local OpTally tally;
inline thread_local OpPhase phase = OpPhase::Other;
inline void count_arith() { ++tally.arithmetic[static_cast<int>(phase)]; }
inline void count_transc() { ++tally.transcendental[static_cast<int>(phase)]; }
}  // namespace detail

inline OpTally op_tally() { return detail::tally; }
inline void reset_op_tally() { detail::tally = OpTally{}; }

/// Attributes counted operations to a phase for the lifetime of the guard.
class ScopedOpPhase {
 public:
  explicit ScopedOpPhase(OpPhase p) : saved_(detail::phase) { detail::phase = p; }
  ~ScopedOpPhase() { detail::phase = saved_; }
  ScopedOpPhase(const ScopedOpPhase&) = delete;
  ScopedOpPhase& operator=(const ScopedOpPhase&) = delete;

 private:
  OpPhase saved_;
};

struct CountedReal {
  double v = 0.0;

  constexpr CountedReal() = default;
  constexpr CountedReal(double x) : v(x) {}  // NOLINT(google-explicit-constructor)

  explicit operator double() const { return v; }

  CountedReal& operator+=(CountedReal o) { detail::count_arith(); v += o.v; return *this; }
  CountedReal& operator-=(CountedReal o) { detail::count_arith(); v -= o.v; return *this; }
  CountedReal& operator*=(CountedReal o) { detail::count_arith(); v *= o.v; return *this; }
  CountedReal& operator/=(CountedReal o) { detail::count_arith(); v /= o.v; return *this; }
};

inline CountedReal operator+(CountedReal a, CountedReal b) { detail::count_arith(); return {a.v + b.v}; }
inline CountedReal operator-(CountedReal a, CountedReal b) { detail::count_arith(); return {a.v - b.v}; }
inline CountedReal operator*(CountedReal a, CountedReal b) { detail::count_arith(); return {a.v * b.v}; }
inline CountedReal operator/(CountedReal a, CountedReal b) { detail::count_arith(); return {a.v / b.v}; }
// Sign flips are free.
inline CountedReal operator-(CountedReal a) { return {-a.v}; }
inline CountedReal operator+(CountedReal a) { return a; }

inline bool operator==(CountedReal a, CountedReal b) { return a.v == b.v; }
inline bool operator!=(CountedReal a, CountedReal b) { return a.v != b.v; }
inline bool operator<(CountedReal a, CountedReal b) { return a.v < b.v; }
inline bool operator<=(CountedReal a, CountedReal b) { return a.v <= b.v; }
inline bool operator>(CountedReal a, CountedReal b) { return a.v > b.v; }
inline bool operator>=(CountedReal a, CountedReal b) { return a.v >= b.v; }

inline CountedReal exp(CountedReal a) { detail::count_transc(); return {std::exp(a.v)}; }
inline CountedReal tanh(CountedReal a) { detail::count_transc(); return {std::tanh(a.v)}; }
inline CountedReal sqrt(CountedReal a) { detail::count_transc(); return {std::sqrt(a.v)}; }
inline CountedReal log(CountedReal a) { detail::count_transc(); return {std::log(a.v)}; }
inline CountedReal abs(CountedReal a) { return {std::abs(a.v)}; }
inline CountedReal max(CountedReal a, CountedReal b) { return a.v < b.v ? b : a; }
inline CountedReal min(CountedReal a, CountedReal b) { return b.v < a.v ? b : a; }
inline bool isfinite(CountedReal a) { return std::isfinite(a.v); }
inline bool isnan(CountedReal a) { return std::isnan(a.v); }
inline bool isinf(CountedReal a) { return std::isinf(a.v); }
inline bool is_finite(CountedReal a) { return std::isfinite(a.v); }
inline const CountedReal& conj(const CountedReal& a) { return a; }
inline const CountedReal& real(const CountedReal& a) { return a; }
inline CountedReal imag(const CountedReal&) { return {0.0}; }
inline CountedReal abs2(CountedReal a) { return a * a; }

inline double to_double(CountedReal v) { return v.v; }

}  // namespace ccn

namespace Eigen {

template <>
struct NumTraits<ccn::CountedReal> : GenericNumTraits<ccn::CountedReal> {
  using Real = ccn::CountedReal;
  using NonInteger = ccn::CountedReal;
  using Nested = ccn::CountedReal;
  using Literal = ccn::CountedReal;

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 1,
    MulCost = 1
  };

  static inline Real epsilon() { return std::numeric_limits<double>::epsilon(); }
  static inline Real dummy_precision() { return 1e-12; }
  static inline Real highest() { return std::numeric_limits<double>::max(); }
  static inline Real lowest() { return std::numeric_limits<double>::lowest(); }
  static inline int digits10() { return std::numeric_limits<double>::digits10; }
};

}  // namespace Eigen
