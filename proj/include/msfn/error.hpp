/* Copyright 2026 The MSFN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace msfn {

// Root of every exception the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (CLI maps these to exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible files: checkpoints, manifests, cache entries.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradients during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace msfn
