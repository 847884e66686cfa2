#pragma once

#include <stdexcept>

namespace gassip {

/// A loss or activation became NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gassip
