#include "etd/error.hpp"

namespace etd {

std::string_view error_tag(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "E_DIM";
    case ErrorCode::numeric: return "E_NUMERIC";
    case ErrorCode::input: return "E_INPUT";
    case ErrorCode::usage: return "E_USAGE";
    case ErrorCode::load: return "E_LOAD";
    case ErrorCode::fit: return "E_FIT";
    case ErrorCode::metric: return "E_METRIC";
    case ErrorCode::checkpoint: return "E_CHECKPOINT";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::internal: return "E_INTERNAL";
  }
  return "E_UNKNOWN";
}

int exit_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::usage: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::load: return 4;
    case ErrorCode::checkpoint: return 5;
    case ErrorCode::input: return 6;
    default: return 1;
  }
}

}  // namespace etd
