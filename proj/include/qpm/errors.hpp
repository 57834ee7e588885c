#pragma once

#include <stdexcept>
#include <string>

namespace qpm {

// Base class for everything thrown by the library. The CLI maps subtypes to
// its exit-code contract (config -> 2, I/O -> 3, numeric/runtime -> 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateVector : Error { using Error::Error; };
struct UnknownClass : Error { using Error::Error; };
struct Underflow : Error { using Error::Error; };
struct MissingPrototype : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct UnknownIdentity : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

}  // namespace qpm
