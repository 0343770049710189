#pragma once

#include <stdexcept>
#include <string>

namespace leafcam {

enum class ErrorKind {
  dimension,
  numeric,
  config,
  usage,
  data,
  io,
  format,
  internal,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error dimension_error(const std::string& msg) { return {ErrorKind::dimension, msg}; }
inline Error numeric_error(const std::string& msg) { return {ErrorKind::numeric, msg}; }
inline Error config_error(const std::string& msg) { return {ErrorKind::config, msg}; }
inline Error usage_error(const std::string& msg) { return {ErrorKind::usage, msg}; }
inline Error data_error(const std::string& msg) { return {ErrorKind::data, msg}; }
inline Error io_error(const std::string& msg) { return {ErrorKind::io, msg}; }
inline Error internal_error(const std::string& msg) { return {ErrorKind::internal, msg}; }

}  // namespace leafcam
