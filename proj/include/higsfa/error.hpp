#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace higsfa {

/// Category of a library failure. The CLI prints it as `kind=<name>`.
enum class ErrorKind {
  Format,
  Consistency,
  Dimension,
  Request,
  DegenerateInput,
  InsufficientData,
  Ingestion,
  Architecture,
  Persistence,
  Episode,
  Config,
  Preparation,
  Report,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace higsfa
