#include "dmlt/worker.hpp"

#include "dmlt/archive.hpp"
#include "dmlt/kernels.hpp"
#include "dmlt/protocol.hpp"
#include "dmlt/tidy.hpp"

namespace dmlt {

WorkerReport runWorker(Backend& backend, Stream& transport, const std::string& name,
                       const std::function<void(uint64_t step, size_t liveBuffers)>& onStepDone) {
  sendMessage(transport, JoinMsg{kProtocolVersion, name});
  ProtocolMessage ackMsg = receiveMessage(transport);
  if (const ShutdownMsg* shutdown = std::get_if<ShutdownMsg>(&ackMsg))
    raise(ErrorCode::VersionMismatch, "rejected at join: " + shutdown->reason);
  const JoinAckMsg* ack = std::get_if<JoinAckMsg>(&ackMsg);
  if (!ack)
    raise(ErrorCode::ProtocolError, std::string("expected JoinAck, got ") + tagName(messageTag(ackMsg)));

  uint32_t workerId = ack->workerId;
  ModelConfig cfg = modelConfigFromJson(ack->modelConfig);
  std::unique_ptr<Layer> model = buildModel(backend, cfg);
  std::vector<Parameter> params = model->parameters();

  WorkerReport report;
  report.baselineLiveBuffers = backend.liveBufferCount();

  for (;;) {
    ProtocolMessage msg = receiveMessage(transport);
    if (const ShutdownMsg* shutdown = std::get_if<ShutdownMsg>(&msg)) {
      report.shutdownReason = shutdown->reason;
      return report;
    }
    const WeightsBroadcastMsg* weights = std::get_if<WeightsBroadcastMsg>(&msg);
    if (!weights)
      raise(ErrorCode::ProtocolError,
            std::string("expected WeightsBroadcast, got ") + tagName(messageTag(msg)));
    uint64_t step = weights->step;

    ProtocolMessage batchMsg = receiveMessage(transport);
    const BatchAssignmentMsg* batch = std::get_if<BatchAssignmentMsg>(&batchMsg);
    if (!batch)
      raise(ErrorCode::ProtocolError,
            std::string("expected BatchAssignment, got ") + tagName(messageTag(batchMsg)));
    if (batch->step != step)
      raise(ErrorCode::ProtocolError, "batch step " + std::to_string(batch->step) +
                                          " != weights step " + std::to_string(step));

    uint32_t localBatch = 0;
    std::vector<std::byte> gradBytes;
    tidy(backend, [&] {
      TensorArchive weightArchive = decodeArchive(backend, weights->archive);
      restoreModel(*model, weightArchive);
      TensorArchive batchArchive = decodeArchive(backend, batch->archive);
      const Tensor& images = batchArchive.at("images");
      const Tensor& labels = batchArchive.at("labels");
      localBatch = static_cast<uint32_t>(images.shape()[0]);
      Variable x(normalizeU8(images));
      zeroGrad(params);
      Variable logits = model->c(x).get();
      Variable loss = softmaxCrossEntropy(logits, labels);
      loss.backward().wait();
      gradBytes = encodeArchive(archiveGradients(*model));
      zeroGrad(params);  // gradient buffers die with this scope
    });

    sendMessage(transport, GradientUploadMsg{step, workerId, localBatch, gradBytes});
    ProtocolMessage ackStep = receiveMessage(transport);
    const StepAckMsg* stepAck = std::get_if<StepAckMsg>(&ackStep);
    if (!stepAck)
      raise(ErrorCode::ProtocolError,
            std::string("expected StepAck, got ") + tagName(messageTag(ackStep)));
    if (stepAck->step != step)
      raise(ErrorCode::ProtocolError, "ack for step " + std::to_string(stepAck->step) +
                                          ", expected " + std::to_string(step));
    report.stepsCompleted += 1;
    if (onStepDone) onStepDone(step, backend.liveBufferCount());
  }
}

}  // namespace dmlt
