#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

// Every translation unit sees exactly one precision. The 32-bit and 64-bit
// builds of the library use different inline namespaces so that both can be
// linked into the same test binary.
#ifdef LEVRL_USE_DOUBLE
#define LEVRL_PRECISION_NS f64
#else
#define LEVRL_PRECISION_NS f32
#endif

#define LEVRL_NAMESPACE_BEGIN \
  namespace levrl {           \
  inline namespace LEVRL_PRECISION_NS {
#define LEVRL_NAMESPACE_END \
  }                         \
  }

LEVRL_NAMESPACE_BEGIN

#ifdef LEVRL_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using TokenId = std::int32_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class LengthError : public Error {
 public:
  using Error::Error;
};
class VocabularyError : public Error {
 public:
  using Error::Error;
};
// Operation invoked on a hypothesis in the wrong phase (e.g. deletion with
// placeholders present).
class StateError : public Error {
 public:
  using Error::Error;
};
class PreconditionError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

LEVRL_NAMESPACE_END
