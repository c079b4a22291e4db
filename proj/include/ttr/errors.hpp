#ifndef TTR_ERRORS_HPP
#define TTR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ttr {

// Error categories map 1:1 onto CLI exit codes (see tools/treerepair.cpp):
// usage 1, io 2, validation 3, numeric 4.

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ttr

#endif
