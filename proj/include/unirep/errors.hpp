#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unirep {

/// Machine-readable failure category. The CLI maps each category to a
/// distinct exit code and prints its name on stderr.
enum class ErrorCategory {
  config,
  shape,
  numerical,
  integrity,
  sampling,
  iteration,
  dependency,
  io,
  not_implemented,
};

std::string_view category_name(ErrorCategory c);
int exit_code(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define UNIREP_DEFINE_ERROR(Name, cat)                                 \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorCategory::cat, what) {} \
  };

UNIREP_DEFINE_ERROR(ConfigError, config)
UNIREP_DEFINE_ERROR(ShapeError, shape)
UNIREP_DEFINE_ERROR(IntegrityError, integrity)
UNIREP_DEFINE_ERROR(SamplingError, sampling)
UNIREP_DEFINE_ERROR(IterationError, iteration)
UNIREP_DEFINE_ERROR(DependencyError, dependency)
UNIREP_DEFINE_ERROR(IoError, io)
UNIREP_DEFINE_ERROR(NotImplementedError, not_implemented)

#undef UNIREP_DEFINE_ERROR

/// Non-finite value. `term` names the loss term (or quantity) that produced it.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::string term = {})
      : Error(ErrorCategory::numerical, what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace unirep
