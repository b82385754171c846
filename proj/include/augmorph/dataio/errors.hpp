#pragma once

#include <stdexcept>

namespace augmorph::dataio {

/// Missing, unreadable or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class VtfErrorKind { io, bad_magic, unknown_dtype, truncated, bad_header };

class VtfError : public DataError {
 public:
  VtfError(VtfErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  [[nodiscard]] VtfErrorKind kind() const { return kind_; }

 private:
  VtfErrorKind kind_;
};

}  // namespace augmorph::dataio
