#include "dmlt/bench.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include "dmlt/csv.hpp"
#include "dmlt/kernels.hpp"
#include "dmlt/tidy.hpp"
#include "dmlt/trainer.hpp"

namespace dmlt {

std::vector<StandaloneRow> benchStandalone(Backend& backend, const ModelConfig& cfg,
                                           const Dataset& dataset,
                                           const std::vector<int64_t>& batchSizes, int64_t epochs,
                                           float lr, float momentum, uint64_t seed) {
  for (size_t i = 1; i < batchSizes.size(); ++i)
    if (batchSizes[i] <= batchSizes[i - 1])
      raise(ErrorCode::InvalidConfig, "batch sizes must be ascending");
  std::vector<StandaloneRow> rows;
  for (int64_t batch : batchSizes) {
    std::unique_ptr<Layer> model = buildModel(backend, cfg);
    MomentumSGD optimizer(*model, lr, momentum);
    BatchIterator loader(dataset, batch, seed);
    int64_t samplesPerEpoch = loader.batchesPerEpoch() * batch;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
      if (epoch > 0) loader.nextEpoch();
      auto start = std::chrono::steady_clock::now();
      BatchIterator::Batch b;
      while (loader.next(b)) {
        tidy(backend, [&] {
          localTrainStep(*model, optimizer, b.images, b.labels);
          optimizer.zeroGrad();
        });
        b = {};  // drop handles to scope-owned tensors
      }
      double wallS = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rows.push_back({batch, epoch, wallS, wallS > 0 ? samplesPerEpoch / wallS : 0.0});
    }
  }
  return rows;
}

void writeStandaloneCsv(const std::string& path, const std::vector<StandaloneRow>& rows) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::IoError, "cannot write " + path);
  out << "batch_size,epoch_wall_s,samples_per_sec\n";
  for (const StandaloneRow& r : rows)
    out << r.batchSize << ',' << r.epochWallS << ',' << r.samplesPerSec << '\n';
}

void writeDistributedCsv(const std::string& path, const std::vector<DistributedRow>& rows) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::IoError, "cannot write " + path);
  out << "workers,regime,global_batch,step_wall_s,compute_s,comm_s,samples_per_sec\n";
  for (const DistributedRow& r : rows)
    out << r.workers << ',' << r.regime << ',' << r.globalBatch << ',' << r.stepWallS << ','
        << r.computeS << ',' << r.commS << ',' << r.samplesPerSec << '\n';
}

DistributedRow summarizeRun(int64_t workers, const RunPlan& plan,
                            const std::vector<StepStats>& stats) {
  std::vector<double> wall, compute, comm, rate;
  for (const StepStats& s : stats) {
    wall.push_back(s.wallMs / 1000.0);
    compute.push_back(s.computeMs / 1000.0);
    comm.push_back(s.commMs / 1000.0);
    rate.push_back(s.samplesPerSec);
  }
  DistributedRow row;
  row.workers = workers;
  row.regime = regimeName(plan.regime);
  row.globalBatch = planGlobalBatch(plan);
  row.stepWallS = median(wall);
  row.computeS = median(compute);
  row.commS = median(comm);
  row.samplesPerSec = median(rate);
  return row;
}

namespace {

std::string formatGroupTable(const std::string& title, const std::string& keyName,
                             const std::map<std::string, std::vector<double>>& groups) {
  std::ostringstream out;
  out << title << "\n";
  out << "  " << keyName << "  median_samples_per_sec  runs\n";
  for (const auto& [key, values] : groups) {
    out << "  " << key << "  " << median(values) << "  " << values.size() << "\n";
  }
  return out.str();
}

}  // namespace

std::string emitReport(const std::vector<std::string>& csvPaths) {
  std::ostringstream out;
  for (const std::string& path : csvPaths) {
    CsvTable table = readCsv(path);
    out << "== " << path << "\n";
    if (table.rows.empty()) {
      out << "  no data\n";
      continue;
    }
    if (table.column("batch_size") >= 0 && table.column("samples_per_sec") >= 0) {
      int64_t keyCol = table.column("batch_size");
      int64_t rateCol = table.column("samples_per_sec");
      std::map<std::string, std::vector<double>> groups;
      for (size_t r = 0; r < table.rows.size(); ++r)
        groups[table.rows[r][static_cast<size_t>(keyCol)]].push_back(table.number(r, rateCol));
      out << formatGroupTable("standalone sweep", "batch_size", groups);
    } else if (table.column("workers") >= 0 && table.column("regime") >= 0 &&
               table.column("samples_per_sec") >= 0) {
      int64_t rateCol = table.column("samples_per_sec");
      // group per regime, then per worker count
      std::map<std::string, std::map<int64_t, std::vector<double>>> regimes;
      for (size_t r = 0; r < table.rows.size(); ++r) {
        const std::string& regime = table.rows[r][static_cast<size_t>(table.column("regime"))];
        int64_t workers = static_cast<int64_t>(table.number(r, table.column("workers")));
        regimes[regime][workers].push_back(table.number(r, rateCol));
      }
      for (const auto& [regime, byWorkers] : regimes) {
        out << "distributed sweep, regime " << regime << "\n";
        out << "  workers  median_samples_per_sec\n";
        for (const auto& [workers, values] : byWorkers)
          out << "  " << workers << "  " << median(values) << "\n";
        double bottom = median(byWorkers.begin()->second);
        double top = median(byWorkers.rbegin()->second);
        if (bottom > 0)
          out << "  scaling ratio (K=" << byWorkers.rbegin()->first << " vs K="
              << byWorkers.begin()->first << "): " << top / bottom << "\n";
      }
    } else if (table.column("step") >= 0 && table.column("samples_per_sec") >= 0) {
      std::vector<double> rates;
      for (size_t r = 0; r < table.rows.size(); ++r)
        rates.push_back(table.number(r, table.column("samples_per_sec")));
      out << "per-step log: " << table.rows.size() << " steps, median samples/sec "
          << median(rates) << "\n";
    } else {
      raise(ErrorCode::MalformedCsv, path + ": unrecognized schema");
    }
  }
  return out.str();
}

}  // namespace dmlt
