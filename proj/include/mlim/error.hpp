/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MLIM_ERROR_HPP_
#define MLIM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace mlim {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or invalid arguments supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor shape or sequence length disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values detected during forward/backward or optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlim

#endif  // MLIM_ERROR_HPP_
