/*
 * Copyright 2026 The pdvs Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Portable counter-based random numbers. Draw i of stream `key` is a pure
// function of (key, i), so generated data does not depend on the standard
// library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pdvs::rng {

/// Name recorded in resolved configs so traces can be regenerated elsewhere.
inline constexpr const char* kAlgorithm = "splitmix64-counter";

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a seed and a stream tag.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix64(seed ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  constexpr std::uint64_t next_u64() noexcept { return mix64(key_ + mix64(counter_++)); }

  /// Uniform in [0, 1) with 53 bits of precision.
  constexpr double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; safe as a log argument.
  constexpr double uniform_open_low() noexcept { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double gaussian() noexcept {
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential(double rate) noexcept { return -std::log(uniform_open_low()) / rate; }

  /// Uniform integer in [lo, hi].
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept {
    const double span = static_cast<double>(hi - lo) + 1.0;
    auto v = lo + static_cast<std::uint64_t>(std::floor(uniform() * span));
    return v > hi ? hi : v;
  }

  /// Geometric on {1, 2, ...} with the given mean (>= 1).
  std::uint64_t geometric(double mean) noexcept {
    if (mean <= 1.0) return 1;
    const double p = 1.0 / mean;
    return 1 + static_cast<std::uint64_t>(std::floor(std::log(uniform_open_low()) / std::log1p(-p)));
  }

  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace pdvs::rng
