#pragma once

#include <stdexcept>
#include <string>

namespace stemgan {

enum class Errc {
  missing_file,
  malformed_header,
  unsupported_encoding,
  io_failure,
  invalid_argument,
  shape_mismatch,
  non_finite,
  format_error,
  config_mismatch,
  empty_input,
  not_fitted,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::missing_file: return "missing file";
    case Errc::malformed_header: return "malformed header";
    case Errc::unsupported_encoding: return "unsupported encoding";
    case Errc::io_failure: return "i/o failure";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::non_finite: return "non-finite value";
    case Errc::format_error: return "format error";
    case Errc::config_mismatch: return "config mismatch";
    case Errc::empty_input: return "empty input";
    case Errc::not_fitted: return "model not fitted";
  }
  return "unknown error";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace stemgan
