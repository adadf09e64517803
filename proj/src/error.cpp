#include "dmlt/error.hpp"

namespace dmlt {

const char* errorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::RaggedInput: return "RaggedInput";
    case ErrorCode::DTypeOverflow: return "DTypeOverflow";
    case ErrorCode::DTypeMismatch: return "DTypeMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorCode::ZeroStep: return "ZeroStep";
    case ErrorCode::InvalidSliceSpec: return "InvalidSliceSpec";
    case ErrorCode::BackendMismatch: return "BackendMismatch";
    case ErrorCode::UseAfterRelease: return "UseAfterRelease";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedInput: return "TruncatedInput";
    case ErrorCode::TrailingGarbage: return "TrailingGarbage";
    case ErrorCode::InvalidDType: return "InvalidDType";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::NameMismatch: return "NameMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::TooManyWorkers: return "TooManyWorkers";
    case ErrorCode::FrameTooLarge: return "FrameTooLarge";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ConnectionClosed: return "ConnectionClosed";
    case ErrorCode::WorkerLost: return "WorkerLost";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
  }
  return "UnknownError";
}

}  // namespace dmlt
