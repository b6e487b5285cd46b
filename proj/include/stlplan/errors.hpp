#ifndef STLPLAN_ERRORS_HPP
#define STLPLAN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stlplan {

// Exit-code contract: 0 ok/satisfied, 1 unsatisfied (monitor), 2 usage/config,
// 3 I/O, 4 numeric abort.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace stlplan

#endif
