#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace memdiff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// invalid or incompatible tensor shapes
struct ShapeError : Error {
  using Error::Error;
};

// violated operation precondition (bad timestep, non-scalar loss, ...)
struct ContractError : Error {
  using Error::Error;
};

// unusable RunConfig, or a checkpoint that does not match the current config
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// checkpoint bytes that fail validation (bad magic, truncation)
struct IntegrityError : Error {
  using Error::Error;
};

// kv-cache ablation grew past its configured cap
struct BudgetError : Error {
  using Error::Error;
};

inline std::string strfmt(const char* f, ...) {
  va_list ap;
  va_start(ap, f);
  char buf[1024];
  vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return std::string(buf);
}

// shortest round-trippable decimal text for a double; used everywhere a float
// lands in a file so that identical runs produce identical bytes
inline std::string dump_f64(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

}  // namespace memdiff
