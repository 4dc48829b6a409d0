#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vaeatk {

// Shape / dimension mismatches and other structurally invalid operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid argument values or configuration (bad kinds, out-of-range knobs).
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File and format problems (IDX parsing, checkpoints, run directories).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite losses, degenerate Jacobians and other numeric dead ends.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vaeatk

#if defined(VAEATK_ENABLE_INTERNAL_CHECKS)
#define VAEATK_CHECK(cond, msg)                              \
  do {                                                       \
    if (!(cond)) throw ::vaeatk::NumericError(msg);          \
  } while (0)
#else
#define VAEATK_CHECK(cond, msg) \
  do {                          \
  } while (0)
#endif
