#pragma once

#include <stdexcept>
#include <string>

namespace dys {

// Error taxonomy shared between the C++ core and the public C API.
// Values are stable; capi.cpp maps them 1:1 onto dys_status.
enum class ErrCode {
  usage = 1,
  config = 2,
  shape = 3,
  domain = 4,
  unknown_attribute = 5,
  capacity = 6,
  degenerate = 7,
  io = 8,
  checksum = 9,
  version = 10,
  truncated = 11,
  manifest_mismatch = 12,
  diverged = 13,
  internal = 14,
};

class Error : public std::runtime_error {
 public:
  Error(ErrCode code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  ErrCode code() const noexcept { return code_; }

 private:
  ErrCode code_;
};

[[noreturn]] inline void raise(ErrCode code, const std::string& msg) { throw Error(code, msg); }

}  // namespace dys
