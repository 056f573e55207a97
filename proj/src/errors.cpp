#include "unirep/errors.hpp"

namespace unirep {

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::integrity: return "integrity";
    case ErrorCategory::sampling: return "sampling";
    case ErrorCategory::iteration: return "iteration";
    case ErrorCategory::dependency: return "dependency";
    case ErrorCategory::io: return "io";
    case ErrorCategory::not_implemented: return "not_implemented";
  }
  return "unknown";
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::shape: return 3;
    case ErrorCategory::numerical: return 4;
    case ErrorCategory::integrity: return 5;
    case ErrorCategory::sampling: return 6;
    case ErrorCategory::iteration: return 7;
    case ErrorCategory::dependency: return 8;
    case ErrorCategory::io: return 9;
    case ErrorCategory::not_implemented: return 10;
  }
  return 1;
}

}  // namespace unirep
