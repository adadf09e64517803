#include "dmlt/coordinator.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include "dmlt/archive.hpp"
#include "dmlt/kernels.hpp"
#include "dmlt/tidy.hpp"

namespace dmlt {

const char* regimeName(Regime regime) {
  return regime == Regime::FixedGlobal ? "fixed_global" : "fixed_local";
}

Regime regimeFromName(const std::string& name) {
  if (name == "fixed_global") return Regime::FixedGlobal;
  if (name == "fixed_local") return Regime::FixedLocal;
  raise(ErrorCode::InvalidConfig, "unknown regime '" + name + "'");
}

int64_t planGlobalBatch(const RunPlan& plan) {
  return plan.regime == Regime::FixedLocal ? plan.workers * plan.localBatch : plan.globalBatch;
}

std::vector<int64_t> partitionBatch(int64_t globalBatch, int64_t workers) {
  if (workers < 1) raise(ErrorCode::InvalidConfig, "need at least one worker");
  if (globalBatch < workers)
    raise(ErrorCode::TooManyWorkers, std::to_string(workers) + " workers for batch " +
                                         std::to_string(globalBatch));
  std::vector<int64_t> sizes(static_cast<size_t>(workers), globalBatch / workers);
  int64_t remainder = globalBatch % workers;
  for (int64_t i = 0; i < remainder; ++i) sizes[static_cast<size_t>(i)] += 1;
  return sizes;
}

namespace {

struct Connection {
  std::unique_ptr<Stream> stream;
  std::shared_ptr<StreamCounters> counters;
  uint32_t workerId = 0;
  std::string name;
  // per-step scratch, written by the connection thread
  GradientUploadMsg upload;
  std::chrono::steady_clock::time_point sendDoneAt;
  std::chrono::steady_clock::time_point firstGradByteAt;
  std::string error;
};

double msBetween(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

Coordinator::Coordinator(Backend& backend, RunPlan plan, ModelConfig modelConfig, Dataset dataset)
    : backend_(backend), plan_(plan), modelConfig_(std::move(modelConfig)), dataset_(std::move(dataset)) {
  if (plan_.workers < 1 || plan_.steps < 0) raise(ErrorCode::InvalidConfig, "bad run plan");
  if (plan_.regime == Regime::FixedLocal && plan_.localBatch < 1)
    raise(ErrorCode::InvalidConfig, "local batch must be >= 1");
  int64_t globalBatch = planGlobalBatch(plan_);
  if (globalBatch > dataset_.size())
    raise(ErrorCode::InvalidConfig, "global batch exceeds dataset size");
  partitionBatch(globalBatch, plan_.workers);  // validates the split exists
  model_ = buildModel(backend_, modelConfig_);
  optimizer_ = std::make_unique<MomentumSGD>(*model_, plan_.lr, plan_.momentum);
}

void Coordinator::run(std::vector<std::unique_ptr<Stream>> rawConnections) {
  if (static_cast<int64_t>(rawConnections.size()) != plan_.workers)
    raise(ErrorCode::InvalidConfig, "expected " + std::to_string(plan_.workers) + " connections");

  std::shared_ptr<BandwidthLimiter> limiter;
  if (plan_.bandwidthCapBps) limiter = std::make_shared<BandwidthLimiter>(*plan_.bandwidthCapBps);

  std::vector<Connection> conns(rawConnections.size());
  for (size_t i = 0; i < rawConnections.size(); ++i) {
    std::unique_ptr<Stream> s = std::move(rawConnections[i]);
    if (limiter || plan_.linkLatencySec > 0)
      s = std::make_unique<ThrottledStream>(std::move(s), limiter, plan_.linkLatencySec);
    conns[i].counters = std::make_shared<StreamCounters>();
    conns[i].stream = std::make_unique<CountingStream>(std::move(s), conns[i].counters);
    conns[i].workerId = static_cast<uint32_t>(i);
  }

  // handshake in ascending worker-id order
  std::string configJson = modelConfigToJson(modelConfig_);
  for (Connection& conn : conns) {
    ProtocolMessage msg = receiveMessage(*conn.stream);
    const JoinMsg* join = std::get_if<JoinMsg>(&msg);
    if (!join)
      raise(ErrorCode::ProtocolError,
            std::string("expected Join, got ") + tagName(messageTag(msg)));
    if (join->protocolVersion != kProtocolVersion) {
      sendMessage(*conn.stream, ShutdownMsg{"protocol version mismatch"});
      raise(ErrorCode::VersionMismatch, "worker '" + join->workerName + "' speaks version " +
                                            std::to_string(join->protocolVersion));
    }
    conn.name = join->workerName;
    sendMessage(*conn.stream, JoinAckMsg{conn.workerId, configJson});
  }

  int64_t globalBatch = planGlobalBatch(plan_);
  std::vector<int64_t> shares = partitionBatch(globalBatch, plan_.workers);
  auto params = model_->namedParameters();

  for (uint64_t step = 0; step < static_cast<uint64_t>(plan_.steps); ++step) {
    for (Connection& conn : conns) {
      conn.counters->bytesRead = 0;
      conn.counters->bytesWritten = 0;
      conn.error.clear();
    }

    // payloads are prepared on this thread; connection threads only move bytes
    std::vector<std::byte> weightsBytes;
    std::vector<std::vector<std::byte>> batchBytes(conns.size());
    std::vector<int64_t> indices = batchIndices(plan_.seed, dataset_.size(), globalBatch, step);
    tidy(backend_, [&] {
      weightsBytes = encodeArchive(archiveModel(*model_));
      int64_t offset = 0;
      for (size_t k = 0; k < conns.size(); ++k) {
        std::vector<int64_t> shard(indices.begin() + offset,
                                   indices.begin() + offset + shares[k]);
        offset += shares[k];
        Dataset batch = gatherBatch(backend_, dataset_, shard);
        TensorArchive archive;
        archive.add("images", batch.images);
        archive.add("labels", batch.labels);
        batchBytes[k] = encodeArchive(archive);
      }
    });

    auto stepStart = std::chrono::steady_clock::now();
    std::vector<std::thread> threads;
    threads.reserve(conns.size());
    for (size_t k = 0; k < conns.size(); ++k) {
      threads.emplace_back([&, k] {
        Connection& conn = conns[k];
        try {
          sendMessage(*conn.stream, WeightsBroadcastMsg{step, weightsBytes});
          sendMessage(*conn.stream, BatchAssignmentMsg{step, batchBytes[k]});
          conn.sendDoneAt = std::chrono::steady_clock::now();
          ProtocolMessage msg = receiveMessage(*conn.stream, kDefaultMaxFrame, &conn.firstGradByteAt);
          GradientUploadMsg* upload = std::get_if<GradientUploadMsg>(&msg);
          if (!upload)
            raise(ErrorCode::ProtocolError,
                  std::string("expected GradientUpload, got ") + tagName(messageTag(msg)));
          if (upload->step != step || upload->workerId != conn.workerId ||
              upload->localBatch != static_cast<uint32_t>(shares[k]))
            raise(ErrorCode::ProtocolError, "gradient upload header mismatch at step " +
                                                std::to_string(step));
          conn.upload = std::move(*upload);
        } catch (const std::exception& e) {
          conn.error = e.what();
        }
      });
    }
    for (std::thread& t : threads) t.join();  // synchronous SGD barrier
    for (Connection& conn : conns) {
      if (!conn.error.empty())
        raise(ErrorCode::WorkerLost, "worker " + std::to_string(conn.workerId) + " ('" + conn.name +
                                         "') failed at step " + std::to_string(step) + ": " +
                                         conn.error);
    }

    // weighted mean over ascending worker ids: scale each shard gradient by
    // b_k/B (exact for power-of-two splits), then combine with the adjacent
    // pairwise tree so shard sums recombine bit-exactly with a single-process
    // full-batch gradient.
    tidy(backend_, [&] {
      std::vector<TensorArchive> grads;
      grads.reserve(conns.size());
      for (Connection& conn : conns) {
        grads.push_back(decodeArchive(backend_, conn.upload.archive));
        conn.upload.archive.clear();
        conn.upload.archive.shrink_to_fit();
        if (grads.back().size() != params.size())
          raise(ErrorCode::NameMismatch, "gradient archive entry count mismatch");
      }
      for (size_t j = 0; j < params.size(); ++j) {
        std::vector<Tensor> parts;
        parts.reserve(conns.size());
        for (size_t k = 0; k < conns.size(); ++k) {
          const TensorArchive::Entry& entry = grads[k].entries()[j];
          if (entry.name != params[j].first)
            raise(ErrorCode::NameMismatch, "gradient entry '" + entry.name + "' != parameter '" +
                                               params[j].first + "'");
          if (entry.tensor.shape() != params[j].second.data().shape())
            raise(ErrorCode::ShapeMismatch, "gradient shape mismatch for " + params[j].first);
          float weight = static_cast<float>(shares[k]) / static_cast<float>(globalBatch);
          parts.push_back(mulScalar(entry.tensor, weight));
        }
        for (int64_t h = 1; h < static_cast<int64_t>(parts.size()); h *= 2)
          for (int64_t i = 0; i + h < static_cast<int64_t>(parts.size()); i += 2 * h)
            parts[i] = add(parts[i], parts[i + h]);
        params[j].second.setGrad(parts[0]);
      }
      optimizer_->step().wait();
      optimizer_->zeroGrad();
    });

    if (onStepApplied) onStepApplied(StepApplyInfo{step, static_cast<int64_t>(conns.size())});

    // acks go out in parallel so link latency is paid once per step
    std::vector<std::thread> ackThreads;
    ackThreads.reserve(conns.size());
    for (Connection& conn : conns)
      ackThreads.emplace_back([&conn, step] { sendMessage(*conn.stream, StepAckMsg{step}); });
    for (std::thread& t : ackThreads) t.join();
    auto stepEnd = std::chrono::steady_clock::now();

    StepStats row;
    row.step = step;
    row.wallMs = msBetween(stepStart, stepEnd);
    double widestGap = 0;
    uint64_t down = 0, up = 0;
    for (const Connection& conn : conns) {
      widestGap = std::max(widestGap, msBetween(conn.sendDoneAt, conn.firstGradByteAt));
      down += conn.counters->bytesWritten;
      up += conn.counters->bytesRead;
    }
    row.computeMs = std::clamp(widestGap, 0.0, row.wallMs);
    row.commMs = row.wallMs - row.computeMs;
    row.samples = globalBatch;
    row.samplesPerSec = row.wallMs > 0 ? globalBatch / (row.wallMs / 1000.0) : 0.0;
    row.bytesDown = down;
    row.bytesUp = up;
    stats_.push_back(row);
  }

  for (Connection& conn : conns) {
    sendMessage(*conn.stream, ShutdownMsg{"run complete"});
    conn.stream->close();
  }
}

void Coordinator::writeCsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::IoError, "cannot write " + path);
  out << "step,wall_ms,compute_ms,comm_ms,samples,samples_per_sec,bytes_down,bytes_up\n";
  for (const StepStats& s : stats_) {
    out << s.step << ',' << s.wallMs << ',' << s.computeMs << ',' << s.commMs << ',' << s.samples
        << ',' << s.samplesPerSec << ',' << s.bytesDown << ',' << s.bytesUp << '\n';
  }
}

}  // namespace dmlt
