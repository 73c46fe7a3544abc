// Copyright 2026 the xmodal authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODAL_ERRORS_HPP
#define XMODAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace xmodal {

/// Root of every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with input data: malformed files, inconsistent pools,
/// missing classes. CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numeric/contract failures inside the math: shape mismatches,
/// non-scalar losses, degenerate problems. CLI exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

// ---- file-format errors (all DataError) ----
class ParseError : public DataError {
 public:
  using DataError::DataError;
};
class BadMagic : public ParseError {
 public:
  using ParseError::ParseError;
};
class Truncated : public ParseError {
 public:
  using ParseError::ParseError;
};
class TrailingData : public ParseError {
 public:
  using ParseError::ParseError;
};
class BadDims : public ParseError {
 public:
  using ParseError::ParseError;
};
class BadLabel : public ParseError {
 public:
  using ParseError::ParseError;
};
class NotRiff : public ParseError {
 public:
  using ParseError::ParseError;
};
class UnsupportedFormat : public ParseError {
 public:
  using ParseError::ParseError;
};
class UnknownToken : public ParseError {
 public:
  using ParseError::ParseError;
};

// ---- dataset / batching ----
class EmptyClass : public DataError {
 public:
  using DataError::DataError;
};
class PairingFailed : public DataError {
 public:
  using DataError::DataError;
};
class IoError : public DataError {
 public:
  using DataError::DataError;
};
class CheckpointMismatch : public DataError {
 public:
  using DataError::DataError;
};

// ---- numeric contracts ----
class ShapeMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};
class BadLength : public NumericError {
 public:
  using NumericError::NumericError;
};
class TooShort : public NumericError {
 public:
  using NumericError::NumericError;
};
class NonScalarLoss : public NumericError {
 public:
  using NumericError::NumericError;
};
class BatchTooSmall : public NumericError {
 public:
  using NumericError::NumericError;
};
class TooFewPoints : public NumericError {
 public:
  using NumericError::NumericError;
};
class LengthMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};
class Degenerate : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace xmodal

#endif  // XMODAL_ERRORS_HPP
