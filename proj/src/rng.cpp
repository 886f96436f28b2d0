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

#include "fawac/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fawac {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) {
    throw std::invalid_argument("Rng::index requires n > 0");
  }
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x = engine_();
  while (x >= limit) {
    x = engine_();
  }
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double Rng::exponential() {
  double u = uniform();
  while (u <= 0.0) {
    u = uniform();
  }
  return -std::log(u);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    total += w;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("categorical draw from zero total weight");
  }
  const double target = uniform() * total;
  double running = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) {
      continue;
    }
    last_positive = i;
    running += weights[i];
    if (target < running) {
      return i;
    }
  }
  return last_positive;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace fawac
