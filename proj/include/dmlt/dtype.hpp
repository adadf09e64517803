#pragma once

#include <cstddef>
#include <cstdint>

#include "dmlt/error.hpp"

namespace dmlt {

enum class DType : uint8_t {
  Float32 = 0,
  Int32 = 1,
  UInt8 = 2,
  Bool = 3,
};

inline size_t dtypeSize(DType dtype) {
  switch (dtype) {
    case DType::Float32: return 4;
    case DType::Int32: return 4;
    case DType::UInt8: return 1;
    case DType::Bool: return 1;
  }
  raise(ErrorCode::InvalidDType, "unknown dtype tag");
}

inline const char* dtypeName(DType dtype) {
  switch (dtype) {
    case DType::Float32: return "float32";
    case DType::Int32: return "int32";
    case DType::UInt8: return "uint8";
    case DType::Bool: return "bool";
  }
  return "?";
}

inline DType dtypeFromTag(uint8_t tag) {
  if (tag > 3) raise(ErrorCode::InvalidDType, "dtype tag " + std::to_string(tag));
  return static_cast<DType>(tag);
}

}  // namespace dmlt
