#include "hrirdiff/error.hpp"

namespace hrirdiff {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kDegenerateFeature: return "degenerate feature";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kContract: return "contract violation";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kUndefinedItd: return "undefined ITD";
    case ErrorKind::kEmptySelection: return "empty selection";
    case ErrorKind::kSamplingDivergence: return "sampling divergence";
    case ErrorKind::kManifestConflict: return "manifest conflict";
  }
  return "error";
}

}  // namespace hrirdiff
