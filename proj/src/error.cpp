#include "sivsim/error.hpp"

namespace sivsim {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kZeroPump: return "ZeroPump";
    case Errc::kCapacityExceeded: return "CapacityExceeded";
    case Errc::kEmptyChannel: return "EmptyChannel";
    case Errc::kNonFiniteModel: return "NonFiniteModel";
    case Errc::kWindowTooShort: return "WindowTooShort";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kTruncatedFile: return "TruncatedFile";
    case Errc::kNonMonotoneTimestamps: return "NonMonotoneTimestamps";
    case Errc::kSchemaMismatch: return "SchemaMismatch";
    case Errc::kUnparseableNumber: return "UnparseableNumber";
    case Errc::kConfig: return "ConfigError";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

}  // namespace sivsim
