#pragma once

#include <stdexcept>
#include <string>

namespace edloc {

enum class ErrorKind {
  io,
  validation,
  missing_record,
  config,
};

// Process exit code associated with an error kind.
constexpr int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::missing_record: return 2;
    case ErrorKind::validation: return 3;
    case ErrorKind::config: return 4;
    case ErrorKind::io: break;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::validation, what);
}

inline Error io_error(const std::string& what) {
  return Error(ErrorKind::io, what);
}

inline Error missing_record(const std::string& what) {
  return Error(ErrorKind::missing_record, what);
}

inline Error config_error(const std::string& what) {
  return Error(ErrorKind::config, what);
}

}  // namespace edloc
