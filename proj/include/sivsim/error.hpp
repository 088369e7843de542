#pragma once

#include <stdexcept>
#include <string>

namespace sivsim {

enum class Errc {
  kInvalidArgument,
  kZeroPump,
  kCapacityExceeded,
  kEmptyChannel,
  kNonFiniteModel,
  kWindowTooShort,
  kBadMagic,
  kTruncatedFile,
  kNonMonotoneTimestamps,
  kSchemaMismatch,
  kUnparseableNumber,
  kConfig,
  kIo,
};

const char* to_string(Errc code) noexcept;

/// Exception carrying one of the error kinds above. All library errors are
/// reported this way; the CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace sivsim
