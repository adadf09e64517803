#include "dmlt/protocol.hpp"

namespace dmlt {

namespace {

void putU32(std::vector<std::byte>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void putU64(std::vector<std::byte>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void putString(std::vector<std::byte>& out, const std::string& s) {
  putU32(out, static_cast<uint32_t>(s.size()));
  for (char c : s) out.push_back(static_cast<std::byte>(c));
}

class BodyReader {
 public:
  explicit BodyReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  const std::byte* take(size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      raise(ErrorCode::DecodeError, std::string("message body truncated at ") + what);
    const std::byte* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  uint32_t u32(const char* what) {
    const std::byte* p = take(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(std::to_integer<uint8_t>(p[i])) << (8 * i);
    return v;
  }

  uint64_t u64(const char* what) {
    const std::byte* p = take(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(std::to_integer<uint8_t>(p[i])) << (8 * i);
    return v;
  }

  std::string string(const char* what) {
    uint32_t len = u32(what);
    const std::byte* p = take(len, what);
    return std::string(reinterpret_cast<const char*>(p), len);
  }

  std::vector<std::byte> rest() {
    std::vector<std::byte> out(bytes_.begin() + static_cast<ptrdiff_t>(pos_), bytes_.end());
    pos_ = bytes_.size();
    return out;
  }

  void expectEnd(const char* what) {
    if (pos_ != bytes_.size())
      raise(ErrorCode::DecodeError, std::string("trailing bytes after ") + what);
  }

 private:
  std::span<const std::byte> bytes_;
  size_t pos_ = 0;
};

}  // namespace

MessageTag messageTag(const ProtocolMessage& message) {
  return std::visit(
      [](const auto& m) -> MessageTag {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JoinMsg>) return MessageTag::Join;
        if constexpr (std::is_same_v<T, JoinAckMsg>) return MessageTag::JoinAck;
        if constexpr (std::is_same_v<T, WeightsBroadcastMsg>) return MessageTag::WeightsBroadcast;
        if constexpr (std::is_same_v<T, BatchAssignmentMsg>) return MessageTag::BatchAssignment;
        if constexpr (std::is_same_v<T, GradientUploadMsg>) return MessageTag::GradientUpload;
        if constexpr (std::is_same_v<T, StepAckMsg>) return MessageTag::StepAck;
        if constexpr (std::is_same_v<T, ShutdownMsg>) return MessageTag::Shutdown;
      },
      message);
}

const char* tagName(MessageTag tag) {
  switch (tag) {
    case MessageTag::Join: return "Join";
    case MessageTag::JoinAck: return "JoinAck";
    case MessageTag::WeightsBroadcast: return "WeightsBroadcast";
    case MessageTag::BatchAssignment: return "BatchAssignment";
    case MessageTag::GradientUpload: return "GradientUpload";
    case MessageTag::StepAck: return "StepAck";
    case MessageTag::Shutdown: return "Shutdown";
  }
  return "?";
}

std::vector<std::byte> encodeMessage(const ProtocolMessage& message) {
  std::vector<std::byte> out;
  out.push_back(static_cast<std::byte>(messageTag(message)));
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JoinMsg>) {
          putU32(out, m.protocolVersion);
          putString(out, m.workerName);
        } else if constexpr (std::is_same_v<T, JoinAckMsg>) {
          putU32(out, m.workerId);
          putString(out, m.modelConfig);
        } else if constexpr (std::is_same_v<T, WeightsBroadcastMsg>) {
          putU64(out, m.step);
          out.insert(out.end(), m.archive.begin(), m.archive.end());
        } else if constexpr (std::is_same_v<T, BatchAssignmentMsg>) {
          putU64(out, m.step);
          out.insert(out.end(), m.archive.begin(), m.archive.end());
        } else if constexpr (std::is_same_v<T, GradientUploadMsg>) {
          putU64(out, m.step);
          putU32(out, m.workerId);
          putU32(out, m.localBatch);
          out.insert(out.end(), m.archive.begin(), m.archive.end());
        } else if constexpr (std::is_same_v<T, StepAckMsg>) {
          putU64(out, m.step);
        } else if constexpr (std::is_same_v<T, ShutdownMsg>) {
          putString(out, m.reason);
        }
      },
      message);
  return out;
}

ProtocolMessage decodeMessage(std::span<const std::byte> payload) {
  if (payload.empty()) raise(ErrorCode::DecodeError, "empty message payload");
  uint8_t tag = std::to_integer<uint8_t>(payload[0]);
  BodyReader r(payload.subspan(1));
  switch (tag) {
    case static_cast<uint8_t>(MessageTag::Join): {
      JoinMsg m;
      m.protocolVersion = r.u32("Join.protocol_version");
      m.workerName = r.string("Join.worker_name");
      r.expectEnd("Join");
      return m;
    }
    case static_cast<uint8_t>(MessageTag::JoinAck): {
      JoinAckMsg m;
      m.workerId = r.u32("JoinAck.worker_id");
      m.modelConfig = r.string("JoinAck.model_config");
      r.expectEnd("JoinAck");
      return m;
    }
    case static_cast<uint8_t>(MessageTag::WeightsBroadcast): {
      WeightsBroadcastMsg m;
      m.step = r.u64("WeightsBroadcast.step");
      m.archive = r.rest();
      return m;
    }
    case static_cast<uint8_t>(MessageTag::BatchAssignment): {
      BatchAssignmentMsg m;
      m.step = r.u64("BatchAssignment.step");
      m.archive = r.rest();
      return m;
    }
    case static_cast<uint8_t>(MessageTag::GradientUpload): {
      GradientUploadMsg m;
      m.step = r.u64("GradientUpload.step");
      m.workerId = r.u32("GradientUpload.worker_id");
      m.localBatch = r.u32("GradientUpload.local_batch");
      m.archive = r.rest();
      return m;
    }
    case static_cast<uint8_t>(MessageTag::StepAck): {
      StepAckMsg m;
      m.step = r.u64("StepAck.step");
      r.expectEnd("StepAck");
      return m;
    }
    case static_cast<uint8_t>(MessageTag::Shutdown): {
      ShutdownMsg m;
      m.reason = r.string("Shutdown.reason");
      r.expectEnd("Shutdown");
      return m;
    }
    default:
      raise(ErrorCode::DecodeError, "unknown message tag " + std::to_string(tag));
  }
}

void sendMessage(Stream& stream, const ProtocolMessage& message, uint64_t maxFrame) {
  std::vector<std::byte> payload = encodeMessage(message);
  writeFrame(stream, payload, maxFrame);
}

ProtocolMessage receiveMessage(Stream& stream, uint64_t maxFrame,
                               std::chrono::steady_clock::time_point* firstByteAt) {
  std::vector<std::byte> payload = readFrame(stream, maxFrame, firstByteAt);
  return decodeMessage(payload);
}

PayloadBreakdown payloadAccounting(uint64_t paramCount, uint32_t localBatch,
                                   const std::array<int64_t, 3>& imageShape,
                                   uint32_t weightEntries) {
  constexpr uint64_t kHeader = 12;              // magic + version + count
  constexpr uint64_t kNominalEntry = 6 + 12 + 8;  // entry fields + nominal name + rank-2 shape
  PayloadBreakdown p;
  p.downWeights = kHeader + weightEntries * kNominalEntry + 4 * paramCount;
  p.upGrads = p.downWeights;
  uint64_t pixels = static_cast<uint64_t>(localBatch) * imageShape[0] * imageShape[1] * imageShape[2];
  uint64_t imagesEntry = 6 + 6 /*"images"*/ + 4 * 4 + pixels;
  uint64_t labelsEntry = 6 + 6 /*"labels"*/ + 4 * 1 + 4ULL * localBatch;
  p.downBatch = kHeader + imagesEntry + labelsEntry;
  p.total = p.downWeights + p.downBatch + p.upGrads;
  return p;
}

}  // namespace dmlt
