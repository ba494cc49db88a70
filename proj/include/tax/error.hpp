/*
 * Copyright 2026 The taxseg Authors.
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

#include <stdexcept>
#include <string>

namespace tax {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or raster dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside its documented domain (route index, class id, tendency name...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// File system failures; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (checkpoint, netpbm, manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN/Inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A precondition the caller must fix (missing stage, stale index, bad flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace tax
