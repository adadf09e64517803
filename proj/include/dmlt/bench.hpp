#pragma once

#include <string>
#include <vector>

#include "dmlt/coordinator.hpp"
#include "dmlt/dataset.hpp"
#include "dmlt/nn.hpp"

namespace dmlt {

struct StandaloneRow {
  int64_t batchSize = 0;
  int64_t epoch = 0;
  double epochWallS = 0;
  double samplesPerSec = 0;
};

// Trains a fresh model per batch size for `epochs` epochs each, timing each
// epoch wall-to-wall (data loading per batch included, validation excluded).
// Batch sizes must be ascending.
std::vector<StandaloneRow> benchStandalone(Backend& backend, const ModelConfig& cfg,
                                           const Dataset& dataset,
                                           const std::vector<int64_t>& batchSizes, int64_t epochs,
                                           float lr, float momentum, uint64_t seed);

void writeStandaloneCsv(const std::string& path, const std::vector<StandaloneRow>& rows);

struct DistributedRow {
  int64_t workers = 0;
  std::string regime;
  int64_t globalBatch = 0;
  double stepWallS = 0;
  double computeS = 0;
  double commS = 0;
  double samplesPerSec = 0;
};

void writeDistributedCsv(const std::string& path, const std::vector<DistributedRow>& rows);

// Medians of per-step coordinator stats for one sweep point.
DistributedRow summarizeRun(int64_t workers, const RunPlan& plan,
                            const std::vector<StepStats>& stats);

// Summary text for standalone/distributed/per-step CSVs: per-group medians
// plus the top-vs-bottom scaling ratio per regime. Empty CSV bodies yield a
// "no data" marker; unknown schemas raise MalformedCsv.
std::string emitReport(const std::vector<std::string>& csvPaths);

}  // namespace dmlt
