/*
 * Copyright 2026 The FAWAC Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fawac {

// Seeded generator with platform-independent derived draws. The standard
// distributions are implementation-defined, so every draw here is built
// directly on the raw 64-bit engine output.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). Requires n > 0.
  std::size_t index(std::size_t n);

  /// Standard normal via Box-Muller.
  double normal();

  /// Exponential with unit rate.
  double exponential();

  /// Draws an index from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);

  template <typename T> void shuffle(std::vector<T> &values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

} // namespace fawac
