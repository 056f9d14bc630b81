#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace airwayseg {

enum class ErrorCode {
  io,                 // file cannot be opened, read or written
  format,             // not a recognised file / malformed header
  unsupported_dtype,  // datatype outside uint8/int16/float32
  size_mismatch,      // header geometry disagrees with payload length
  orientation,        // non axis-aligned affine
  geometry,           // grids that must share a lattice do not
  out_of_range,       // index/box/offset outside a grid
  invalid_argument,   // violated precondition on a parameter
  empty_mask,         // operation needs a nonempty mask
  seed_not_found,
  leakage,            // region growing exceeded its voxel budget
  backend,
  protocol,           // external backend wire protocol violation
  config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::unsupported_dtype: return "unsupported_dtype";
    case ErrorCode::size_mismatch: return "size_mismatch";
    case ErrorCode::orientation: return "orientation";
    case ErrorCode::geometry: return "geometry";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::empty_mask: return "empty_mask";
    case ErrorCode::seed_not_found: return "seed_not_found";
    case ErrorCode::leakage: return "leakage";
    case ErrorCode::backend: return "backend";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

/// Single exception type for the library; `code()` carries the category and
/// the message carries the context (file, stage, backend, tile, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Rethrows `e` with `context` prepended, keeping the category.
[[noreturn]] inline void rethrow_with_context(const Error& e, std::string_view context) {
  throw Error(e.code(), std::string(context) + ": " + e.what());
}

}  // namespace airwayseg
