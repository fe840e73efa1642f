#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace calibless {

/// Seeded generator with a fully specified output sequence.
///
/// Engine is std::mt19937_64, whose sequence is fixed by the C++ standard. Uniform and
/// normal draws are derived here rather than through <random> distributions, whose
/// algorithms differ between standard libraries. Bump kRngVersion if either derivation
/// changes, since stored datasets record it.
class Rng
{
public:
  static constexpr int kRngVersion = 1;

  explicit Rng(std::uint64_t seed)
      : engine_(seed)
  {
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one draw per call.
  double normal()
  {
    double u1 = uniform();
    double const u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next() { return engine_(); }

private:
  std::mt19937_64 engine_;
};

} // namespace calibless
