#pragma once

#include <functional>
#include <string>

#include "dmlt/nn.hpp"
#include "dmlt/stream.hpp"

namespace dmlt {

struct WorkerReport {
  uint64_t stepsCompleted = 0;
  size_t baselineLiveBuffers = 0;  // live buffers right after model build
  std::string shutdownReason;
};

// Client side of the training protocol: join, build the model from the
// acked config, then per step restore broadcast weights, compute shard
// gradients inside a tidy scope and upload them. Returns on Shutdown;
// protocol violations and decode failures raise with a diagnostic.
WorkerReport runWorker(Backend& backend, Stream& transport, const std::string& name,
                       const std::function<void(uint64_t step, size_t liveBuffers)>& onStepDone = {});

}  // namespace dmlt
