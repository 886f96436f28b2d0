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

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fawac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Which per-step signal a value function accumulates.
enum class Signal { kReward, kCost };

inline const char *to_string(Signal signal) {
  return signal == Signal::kReward ? "reward" : "cost";
}

// Error hierarchy. Every failure surfaced by the library derives from Error so
// that the harness can attach the failing stage name.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidSpecError : public Error {
public:
  using Error::Error;
};

class InvalidInputError : public Error {
public:
  using Error::Error;
};

class SupportViolationError : public Error {
public:
  using Error::Error;
};

class NonConvergenceError : public Error {
public:
  using Error::Error;
};

class DivergenceError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  using Error::Error;
};

class UnvisitedPairError : public Error {
public:
  UnvisitedPairError(std::size_t state, std::size_t action)
      : Error("state-action pair (" + std::to_string(state) + ", " +
              std::to_string(action) + ") is not covered by the dataset") {}
};

} // namespace fawac
