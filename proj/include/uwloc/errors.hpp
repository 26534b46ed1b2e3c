#pragma once

#include <stdexcept>
#include <string>

namespace uwloc {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A constructor or operation received an argument outside its domain.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Geometry that makes a quantity undefined: coincident points, zero range,
// or a source component exactly on a reference-sensor axis.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

// A matrix expected to be positive semidefinite has a negative pivot beyond
// tolerance.
class NotPsd : public Error {
 public:
  using Error::Error;
};

// Family of condition-guard failures. The guard threshold is shared across
// the library (see linalg.hpp).
class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public SingularMatrix {
 public:
  using SingularMatrix::SingularMatrix;
};

class SingularFim : public SingularMatrix {
 public:
  using SingularMatrix::SingularMatrix;
};

class SingularWeighting : public SingularMatrix {
 public:
  using SingularMatrix::SingularMatrix;
};

// A least-squares normal matrix is rank deficient; signals degenerate sensor
// geometry or too few sensors.
class RankDeficient : public SingularMatrix {
 public:
  using SingularMatrix::SingularMatrix;
};

// The column spanning the projection subspace vanished.
class DegenerateProjection : public Error {
 public:
  using Error::Error;
};

// A squared-speed estimate came out non-positive beyond the clamp tolerance.
class NonPositiveSpeedSquare : public Error {
 public:
  using Error::Error;
};

// Scenario / experiment configuration problem; message names the key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An ensemble statistic was requested from an empty list.
class EmptyEnsemble : public Error {
 public:
  using Error::Error;
};

}  // namespace uwloc
