#include "ficl/error.hpp"

namespace ficl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kCapacity: return "capacity";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kConsistency: return "consistency";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kCapacity: return 3;
    case ErrorKind::kCorruption: return 4;
    default: return 1;
  }
}

}  // namespace ficl
