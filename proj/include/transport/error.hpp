#pragma once

#include <stdexcept>
#include <string>

namespace transport {

/// Raised for every contract violation or data problem detected by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace transport
