#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace etd {

enum class ErrorCode {
  dimension,
  numeric,
  input,
  usage,
  load,
  fit,
  metric,
  checkpoint,
  io,
  internal,
};

// Short machine-greppable tag, e.g. "E_DIM".
std::string_view error_tag(ErrorCode code) noexcept;

// Process exit status used by the CLI for each error family.
int exit_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace etd
