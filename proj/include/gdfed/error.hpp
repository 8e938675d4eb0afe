#pragma once

#include <stdexcept>
#include <string>

namespace gdfed {

// Every error raised by the library carries a category so the CLI can
// report "<category>: <message>" and pick an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

// Shapes, names or trainable flags do not line up.
struct StructuralError : Error {
  explicit StructuralError(const std::string& w) : Error("structural", w) {}
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& w) : Error("argument", w) {}
};

// Malformed bytes on the wire or in a codec payload.
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};

// Round-state violations: wrong round, wrong message kind, missing clients.
struct ProtocolError : Error {
  explicit ProtocolError(const std::string& w) : Error("protocol", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

}  // namespace gdfed
