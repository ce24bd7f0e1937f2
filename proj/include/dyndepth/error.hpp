#pragma once

#include <stdexcept>
#include <string>

namespace dyndepth {

enum class ErrorKind {
  structural,  // malformed graph, shape or block mismatch
  numeric,     // non-finite value
  state,       // call made in the wrong order
  domain,      // argument outside the operation's domain
  config,      // inconsistent configuration
  io,          // unreadable / malformed file
  divergence,  // training loss blew up
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace dyndepth
