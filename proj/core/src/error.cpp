#include "instopt/error.hpp"

namespace instopt {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::upstream: return "upstream";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::undefined: return "undefined";
  }
  return "unknown";
}

}  // namespace instopt
