#pragma once

#include <stdexcept>
#include <string>

namespace cajnet {

// Broad failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  usage,      // bad configuration or arguments
  shape,      // dimension mismatch between operands
  data,       // malformed or out-of-range input data
  format,     // unreadable file layout
  numerical,  // singular system, non-finite loss, ...
  io,         // filesystem failure
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::data: return "data error";
    case ErrorKind::format: return "format error";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return {ErrorKind::usage, what}; }
inline Error shape_error(const std::string& what) { return {ErrorKind::shape, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::data, what}; }
inline Error format_error(const std::string& what) { return {ErrorKind::format, what}; }
inline Error numerical_error(const std::string& what) { return {ErrorKind::numerical, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::io, what}; }

}  // namespace cajnet
