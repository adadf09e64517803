#pragma once

#include <stdexcept>
#include <string>

namespace dmlt {

enum class ErrorCode {
  // tensor construction / kernels
  RaggedInput,
  DTypeOverflow,
  DTypeMismatch,
  ShapeMismatch,
  IndexOutOfBounds,
  ZeroStep,
  InvalidSliceSpec,
  BackendMismatch,
  UseAfterRelease,
  // autograd / nn
  NonScalarLoss,
  MissingGradient,
  LabelOutOfRange,
  InvalidConfig,
  // archive / idx decoding
  BadMagic,
  UnsupportedVersion,
  TruncatedInput,
  TrailingGarbage,
  InvalidDType,
  DuplicateName,
  NameMismatch,
  CountMismatch,
  // distributed runtime
  TooManyWorkers,
  FrameTooLarge,
  DecodeError,
  ProtocolError,
  VersionMismatch,
  ConnectionClosed,
  WorkerLost,
  IoError,
  // bench
  MalformedCsv,
};

const char* errorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(errorCodeName(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace dmlt
