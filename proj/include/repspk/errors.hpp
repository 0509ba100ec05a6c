#pragma once

#include <stdexcept>

namespace repspk {

// Validation failure: malformed shape, bad argument, violated contract.
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : ValueError {
  using ValueError::ValueError;
};

// Filesystem or serialization failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace repspk
