#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dmlt/stream.hpp"

namespace dmlt {

constexpr uint32_t kProtocolVersion = 1;

// Frame payload = tag byte + body. Strings are u32 length + bytes; embedded
// tensor archives use the archive encoding verbatim and run to the end of
// the body. All integers little-endian.
enum class MessageTag : uint8_t {
  Join = 1,
  JoinAck = 2,
  WeightsBroadcast = 3,
  BatchAssignment = 4,
  GradientUpload = 5,
  StepAck = 6,
  Shutdown = 7,
};

struct JoinMsg {
  uint32_t protocolVersion = kProtocolVersion;
  std::string workerName;
};
struct JoinAckMsg {
  uint32_t workerId = 0;
  std::string modelConfig;  // JSON bytes
};
struct WeightsBroadcastMsg {
  uint64_t step = 0;
  std::vector<std::byte> archive;
};
struct BatchAssignmentMsg {
  uint64_t step = 0;
  std::vector<std::byte> archive;  // entries "images" (uint8), "labels" (int32)
};
struct GradientUploadMsg {
  uint64_t step = 0;
  uint32_t workerId = 0;
  uint32_t localBatch = 0;
  std::vector<std::byte> archive;
};
struct StepAckMsg {
  uint64_t step = 0;
};
struct ShutdownMsg {
  std::string reason;
};

using ProtocolMessage = std::variant<JoinMsg, JoinAckMsg, WeightsBroadcastMsg, BatchAssignmentMsg,
                                     GradientUploadMsg, StepAckMsg, ShutdownMsg>;

MessageTag messageTag(const ProtocolMessage& message);
const char* tagName(MessageTag tag);

std::vector<std::byte> encodeMessage(const ProtocolMessage& message);
// Raises DecodeError on unknown tags, truncated bodies or trailing bytes.
ProtocolMessage decodeMessage(std::span<const std::byte> payload);

void sendMessage(Stream& stream, const ProtocolMessage& message,
                 uint64_t maxFrame = kDefaultMaxFrame);
ProtocolMessage receiveMessage(Stream& stream, uint64_t maxFrame = kDefaultMaxFrame,
                               std::chrono::steady_clock::time_point* firstByteAt = nullptr);

// Archive-level bytes moved per worker per step. Weight and gradient terms
// are 4*paramCount plus archive overhead (12-byte header and, when
// weightEntries is given, 6 + nominal 12-byte name + 4*ndim per entry); the
// batch term is the exact archive size for uint8 images plus int32 labels.
struct PayloadBreakdown {
  uint64_t downWeights = 0;
  uint64_t downBatch = 0;
  uint64_t upGrads = 0;
  uint64_t total = 0;
};

PayloadBreakdown payloadAccounting(uint64_t paramCount, uint32_t localBatch,
                                   const std::array<int64_t, 3>& imageShape,
                                   uint32_t weightEntries = 0);

}  // namespace dmlt
