#pragma once

#include <stdexcept>
#include <string>

namespace ficl {

enum class ErrorKind {
  kDimension,
  kIndex,
  kUsage,
  kInput,
  kCapacity,
  kCorruption,
  kConfig,
  kConsistency,
  kDomain,
  kNumeric,
};

const char* to_string(ErrorKind kind);

// All library failures derive from this; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FICL_DEFINE_ERROR(Name, Kind)                  \
  class Name : public Error {                          \
   public:                                             \
    explicit Name(const std::string& what)             \
        : Error(ErrorKind::Kind, what) {}              \
  };

FICL_DEFINE_ERROR(DimensionError, kDimension)
FICL_DEFINE_ERROR(IndexError, kIndex)
FICL_DEFINE_ERROR(UsageError, kUsage)
FICL_DEFINE_ERROR(InputError, kInput)
FICL_DEFINE_ERROR(CapacityError, kCapacity)
FICL_DEFINE_ERROR(CorruptionError, kCorruption)
FICL_DEFINE_ERROR(ConfigError, kConfig)
FICL_DEFINE_ERROR(ConsistencyError, kConsistency)
FICL_DEFINE_ERROR(DomainError, kDomain)
FICL_DEFINE_ERROR(NumericError, kNumeric)

#undef FICL_DEFINE_ERROR

// Process exit code for the CLI: 2 config, 3 capacity, 4 corruption, 1 other.
int exit_code_for(ErrorKind kind);

}  // namespace ficl
