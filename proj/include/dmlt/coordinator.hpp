#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmlt/dataset.hpp"
#include "dmlt/nn.hpp"
#include "dmlt/protocol.hpp"
#include "dmlt/stream.hpp"

namespace dmlt {

enum class Regime { FixedGlobal, FixedLocal };

const char* regimeName(Regime regime);
Regime regimeFromName(const std::string& name);

struct RunPlan {
  Regime regime = Regime::FixedGlobal;
  int64_t globalBatch = 64;  // FixedGlobal: held constant and split
  int64_t localBatch = 64;   // FixedLocal: per-worker share, global = K * local
  int64_t workers = 1;
  int64_t steps = 10;
  float lr = 0.05f;
  float momentum = 0.9f;
  uint64_t seed = 1;
  // Shared-medium cap applied on the coordinator side of every link, both
  // directions, reproducing a saturable access network.
  std::optional<double> bandwidthCapBps;
  // Per-message send latency on coordinator-side links (seconds), emulating
  // serialization plus propagation delay of a real hop.
  double linkLatencySec = 0.0;
};

int64_t planGlobalBatch(const RunPlan& plan);

// Per-worker shares differing by at most one, larger shares to lower worker
// ids; raises TooManyWorkers when globalBatch < workers.
std::vector<int64_t> partitionBatch(int64_t globalBatch, int64_t workers);

struct StepStats {
  uint64_t step = 0;
  double wallMs = 0;
  double computeMs = 0;  // widest send-done -> first gradient byte window
  double commMs = 0;     // wallMs - computeMs
  int64_t samples = 0;
  double samplesPerSec = 0;
  uint64_t bytesDown = 0;
  uint64_t bytesUp = 0;
};

struct StepApplyInfo {
  uint64_t step = 0;
  int64_t uploadsReceived = 0;  // gradient uploads held when the update ran
};

// Synchronous data-parallel SGD server. Each step: broadcast weights, send
// per-worker batch shards, wait at the barrier for every gradient upload,
// apply the local-batch-weighted mean gradient, then ack. A lost worker
// aborts the run (WorkerLost).
class Coordinator {
 public:
  Coordinator(Backend& backend, RunPlan plan, ModelConfig modelConfig, Dataset dataset);

  // Drives the full run over the given worker connections (one per worker,
  // ascending worker id). Returns when every step is applied and workers
  // were told to shut down.
  void run(std::vector<std::unique_ptr<Stream>> connections);

  Layer& model() { return *model_; }
  const std::vector<StepStats>& stats() const { return stats_; }
  void writeCsv(const std::string& path) const;

  // Test hook, called right after each optimizer step.
  std::function<void(const StepApplyInfo&)> onStepApplied;

 private:
  Backend& backend_;
  RunPlan plan_;
  ModelConfig modelConfig_;
  Dataset dataset_;
  std::unique_ptr<Layer> model_;
  std::unique_ptr<MomentumSGD> optimizer_;
  std::vector<StepStats> stats_;
};

}  // namespace dmlt
