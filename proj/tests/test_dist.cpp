#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "dmlt/archive.hpp"
#include "dmlt/kernels.hpp"
#include "dmlt/rng.hpp"
#include "dist_harness.hpp"

using namespace dmlt;

namespace {

ModelConfig smallCnnConfig(uint64_t seed) {
  ModelConfig cfg;
  cfg.arch = "small_cnn";
  cfg.inputShape = {1, 12, 12};
  cfg.hidden = 4;
  cfg.classes = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("dist: partition examples and properties") {
  CHECK(partitionBatch(64, 4) == std::vector<int64_t>{16, 16, 16, 16});
  CHECK(partitionBatch(10, 3) == std::vector<int64_t>{4, 3, 3});
  CHECK(partitionBatch(64, 1) == std::vector<int64_t>{64});
  CHECK_THROWS_WITH_AS(partitionBatch(3, 4), doctest::Contains("TooManyWorkers"), Error);

  for (int64_t batch : {7, 16, 63, 64, 100}) {
    for (int64_t workers : {1, 2, 3, 5, 7}) {
      if (batch < workers) continue;
      std::vector<int64_t> shares = partitionBatch(batch, workers);
      int64_t sum = 0, lo = batch, hi = 0;
      for (int64_t s : shares) {
        sum += s;
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
      CHECK(sum == batch);        // conservation
      CHECK(hi - lo <= 1);        // even split
      for (size_t i = 1; i < shares.size(); ++i) CHECK(shares[i - 1] >= shares[i]);
    }
  }
}

TEST_CASE("dist: weighted mean of equal gradients is the gradient") {
  // b = [2,6]: weights 0.25 and 0.75 must sum to exactly 1 on these values
  Backend b;
  Tensor g = tensorFromNested(b, {1.0, -2.0, 4.0}, DType::Float32);
  Tensor part1 = mulScalar(g, 2.0f / 8.0f);
  Tensor part2 = mulScalar(g, 6.0f / 8.0f);
  CHECK(add(part1, part2).toVector<float>() == g.toVector<float>());
}

TEST_CASE("dist: K=1 run equals the local training loop bit-exactly") {
  Backend b;
  Dataset dataset = synthDataset(b, 320, 10, {1, 12, 12}, 500);
  RunPlan plan;
  plan.regime = Regime::FixedGlobal;
  plan.globalBatch = 64;
  plan.workers = 1;
  plan.steps = 3;
  plan.lr = 0.05f;
  plan.momentum = 0.9f;
  plan.seed = 500;

  auto distributed = disttest::runInProcess(plan, smallCnnConfig(123), dataset);
  auto single = disttest::runSingleProcess(plan, smallCnnConfig(123), dataset);
  CHECK(disttest::maxAbsDiff(distributed.finalParams, single) == 0.0);
}

TEST_CASE("dist: K=4 equals single process within 1e-6 after 5 steps") {
  Backend b;
  Dataset dataset = synthDataset(b, 320, 10, {1, 12, 12}, 501);
  RunPlan plan;
  plan.globalBatch = 64;
  plan.workers = 4;
  plan.steps = 5;
  plan.lr = 0.05f;
  plan.momentum = 0.9f;
  plan.seed = 501;

  auto distributed = disttest::runInProcess(plan, smallCnnConfig(9), dataset);
  auto single = disttest::runSingleProcess(plan, smallCnnConfig(9), dataset);
  CHECK(disttest::maxAbsDiff(distributed.finalParams, single) <= 1e-6);
}

TEST_CASE("dist: equivalence property over random power-of-two plans") {
  Backend b;
  Dataset dataset = synthDataset(b, 320, 10, {1, 8, 8}, 600);
  Rng rng(601);
  for (int iter = 0; iter < 6; ++iter) {
    RunPlan plan;
    plan.regime = rng.below(2) ? Regime::FixedGlobal : Regime::FixedLocal;
    int64_t workers = int64_t{1} << rng.below(4);  // 1,2,4,8
    int64_t batch = int64_t{16} << rng.below(3);   // 16,32,64
    if (batch < workers) batch = workers;
    plan.workers = workers;
    plan.globalBatch = batch;
    plan.localBatch = batch / workers;  // keeps the global batch identical per regime
    plan.steps = 3;
    plan.lr = 0.05f;
    plan.momentum = 0.9f;
    plan.seed = 600 + static_cast<uint64_t>(iter);

    ModelConfig cfg = smallCnnConfig(600 + static_cast<uint64_t>(iter));
    cfg.inputShape = {1, 8, 8};
    auto distributed = disttest::runInProcess(plan, cfg, dataset);
    auto single = disttest::runSingleProcess(plan, cfg, dataset);
    INFO("iter ", iter, " workers ", workers, " batch ", batch);
    CHECK(disttest::maxAbsDiff(distributed.finalParams, single) == 0.0);
  }
}

TEST_CASE("dist: uneven split still tracks the full-batch gradient closely") {
  Backend b;
  Dataset dataset = synthDataset(b, 120, 10, {1, 12, 12}, 502);
  RunPlan plan;
  plan.globalBatch = 50;  // 3 workers -> [17,17,16]
  plan.workers = 3;
  plan.steps = 3;
  plan.lr = 0.05f;
  plan.momentum = 0.9f;
  plan.seed = 502;

  auto distributed = disttest::runInProcess(plan, smallCnnConfig(10), dataset);
  auto single = disttest::runSingleProcess(plan, smallCnnConfig(10), dataset);
  CHECK(disttest::maxAbsDiff(distributed.finalParams, single) <= 1e-4);
}

TEST_CASE("dist: barrier holds until every gradient upload arrived") {
  Backend b;
  Dataset dataset = synthDataset(b, 128, 4, {1, 8, 8}, 503);
  RunPlan plan;
  plan.globalBatch = 16;
  plan.workers = 3;
  plan.steps = 2;
  plan.seed = 503;

  std::atomic<int64_t> uploadsSent{0};
  std::atomic<bool> orderViolated{false};
  ModelConfig cfg = smallCnnConfig(3);
  cfg.inputShape = {1, 8, 8};
  cfg.classes = 4;

  // manual worker threads: worker 2 delays its upload, every worker counts
  std::vector<std::unique_ptr<Stream>> coordinatorEnds, workerEnds;
  for (int k = 0; k < 3; ++k) {
    auto [a, w] = makePipePair();
    coordinatorEnds.push_back(std::move(a));
    workerEnds.push_back(std::move(w));
  }
  std::vector<std::thread> workers;
  for (int k = 0; k < 3; ++k) {
    workers.emplace_back([&, k] {
      Backend wb;
      Stream& s = *workerEnds[static_cast<size_t>(k)];
      sendMessage(s, JoinMsg{kProtocolVersion, "w"});
      ModelConfig wcfg = modelConfigFromJson(std::get<JoinAckMsg>(receiveMessage(s)).modelConfig);
      auto model = buildModel(wb, wcfg);
      auto params = model->parameters();
      for (;;) {
        ProtocolMessage msg = receiveMessage(s);
        if (std::holds_alternative<ShutdownMsg>(msg)) return;
        const auto& weights = std::get<WeightsBroadcastMsg>(msg);
        ProtocolMessage batchMsg = receiveMessage(s);
        const auto& batch = std::get<BatchAssignmentMsg>(batchMsg);
        uint32_t localBatch = 0;
        std::vector<std::byte> gradBytes;
        tidy(wb, [&] {
          restoreModel(*model, decodeArchive(wb, weights.archive));
          TensorArchive ba = decodeArchive(wb, batch.archive);
          localBatch = static_cast<uint32_t>(ba.at("images").shape()[0]);
          zeroGrad(params);
          Variable loss =
              softmaxCrossEntropy(model->c(Variable(normalizeU8(ba.at("images")))).get(),
                                  ba.at("labels"));
          loss.backward().wait();
          gradBytes = encodeArchive(archiveGradients(*model));
          zeroGrad(params);
        });
        if (k == 2) std::this_thread::sleep_for(std::chrono::milliseconds(120));
        uploadsSent.fetch_add(1);
        sendMessage(s, GradientUploadMsg{weights.step, static_cast<uint32_t>(k), localBatch,
                                         gradBytes});
        receiveMessage(s);  // StepAck
      }
    });
  }

  Backend cb;
  Coordinator coordinator(cb, plan, cfg, dataset);
  coordinator.onStepApplied = [&](const StepApplyInfo& info) {
    if (uploadsSent.load() != static_cast<int64_t>(plan.workers) * static_cast<int64_t>(info.step + 1))
      orderViolated = true;
    CHECK(info.uploadsReceived == plan.workers);
  };
  coordinator.run(std::move(coordinatorEnds));
  for (auto& t : workers) t.join();
  CHECK_FALSE(orderViolated.load());
}

TEST_CASE("dist: worker loop emits uploads with enumeration names, scripted transport") {
  Backend b;
  Dataset dataset = synthDataset(b, 32, 4, {1, 6, 6}, 201);
  ModelConfig cfg;
  cfg.arch = "mlp";
  cfg.inputShape = {1, 6, 6};
  cfg.hidden = 5;
  cfg.classes = 4;
  cfg.seed = 11;

  auto [coordinatorEnd, workerEnd] = makePipePair();
  std::thread workerThread([&] {
    Backend wb;
    runWorker(wb, *workerEnd, "scripted");
  });

  // scripted coordinator side: one step, then shutdown
  ProtocolMessage join = receiveMessage(*coordinatorEnd);
  CHECK(std::get<JoinMsg>(join).workerName == "scripted");
  CHECK(std::get<JoinMsg>(join).protocolVersion == kProtocolVersion);
  sendMessage(*coordinatorEnd, JoinAckMsg{0, modelConfigToJson(cfg)});

  Backend cb;
  auto model = buildModel(cb, cfg);
  sendMessage(*coordinatorEnd, WeightsBroadcastMsg{0, encodeArchive(archiveModel(*model))});
  std::vector<int64_t> indices = batchIndices(201, dataset.size(), 8, 0);
  Dataset batch = gatherBatch(dataset, indices);
  TensorArchive batchArchive;
  batchArchive.add("images", batch.images);
  batchArchive.add("labels", batch.labels);
  sendMessage(*coordinatorEnd, BatchAssignmentMsg{0, encodeArchive(batchArchive)});

  ProtocolMessage uploadMsg = receiveMessage(*coordinatorEnd);
  const GradientUploadMsg& upload = std::get<GradientUploadMsg>(uploadMsg);
  CHECK(upload.step == 0);
  CHECK(upload.workerId == 0);
  CHECK(upload.localBatch == 8);
  TensorArchive grads = decodeArchive(cb, upload.archive);
  auto params = model->namedParameters();
  REQUIRE(grads.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(grads.entries()[i].name == params[i].first);
    CHECK(grads.entries()[i].tensor.shape() == params[i].second.data().shape());
  }
  sendMessage(*coordinatorEnd, StepAckMsg{0});
  sendMessage(*coordinatorEnd, ShutdownMsg{"done"});
  workerThread.join();
}

TEST_CASE("dist: worker live-buffer count returns to the post-join baseline") {
  Backend b;
  Dataset dataset = synthDataset(b, 128, 4, {1, 8, 8}, 204);
  RunPlan plan;
  plan.globalBatch = 16;
  plan.workers = 2;
  plan.steps = 10;
  plan.seed = 204;
  ModelConfig cfg = smallCnnConfig(5);
  cfg.inputShape = {1, 8, 8};
  cfg.classes = 4;

  std::vector<size_t> baselines(2, 0);
  std::vector<std::vector<size_t>> live(2);
  auto result = disttest::runInProcess(plan, cfg, dataset, {},
                                       [&](uint32_t worker, uint64_t /*step*/, size_t liveBuffers) {
                                         live[worker].push_back(liveBuffers);
                                       });
  for (int k = 0; k < 2; ++k) {
    REQUIRE(result.workers[static_cast<size_t>(k)].stepsCompleted == 10);
    size_t baseline = result.workers[static_cast<size_t>(k)].baselineLiveBuffers;
    for (size_t liveCount : live[static_cast<size_t>(k)]) CHECK(liveCount == baseline);
  }
}

TEST_CASE("dist: lost worker aborts the run with a diagnostic") {
  Backend b;
  Dataset dataset = synthDataset(b, 64, 4, {1, 6, 6}, 205);
  RunPlan plan;
  plan.globalBatch = 8;
  plan.workers = 2;
  plan.steps = 5;
  plan.seed = 205;
  ModelConfig cfg;
  cfg.arch = "mlp";
  cfg.inputShape = {1, 6, 6};
  cfg.hidden = 4;
  cfg.classes = 4;
  cfg.seed = 2;

  std::vector<std::unique_ptr<Stream>> coordinatorEnds, workerEnds;
  for (int k = 0; k < 2; ++k) {
    auto [a, w] = makePipePair();
    coordinatorEnds.push_back(std::move(a));
    workerEnds.push_back(std::move(w));
  }
  // worker 0 behaves; worker 1 dies after joining
  std::thread good([&] {
    Backend wb;
    try {
      runWorker(wb, *workerEnds[0], "good");
    } catch (const Error&) {
      // the coordinator abort closes the pipe mid-protocol
    }
  });
  std::thread bad([&] {
    Stream& s = *workerEnds[1];
    sendMessage(s, JoinMsg{kProtocolVersion, "bad"});
    receiveMessage(s);  // JoinAck
    s.close();          // vanish before uploading anything
  });

  Backend cb;
  Coordinator coordinator(cb, plan, cfg, dataset);
  CHECK_THROWS_WITH_AS(coordinator.run(std::move(coordinatorEnds)),
                       doctest::Contains("WorkerLost"), Error);
  for (auto& end : workerEnds) end->close();
  good.join();
  bad.join();
}

TEST_CASE("dist: version mismatch is rejected at join") {
  Backend b;
  Dataset dataset = synthDataset(b, 32, 4, {1, 6, 6}, 206);
  RunPlan plan;
  plan.globalBatch = 8;
  plan.workers = 1;
  plan.steps = 1;
  plan.seed = 206;
  ModelConfig cfg;
  cfg.arch = "mlp";
  cfg.inputShape = {1, 6, 6};
  cfg.hidden = 4;
  cfg.classes = 4;

  auto [coordinatorEnd, workerEnd] = makePipePair();
  std::thread futureWorker([&] {
    sendMessage(*workerEnd, JoinMsg{2, "from-the-future"});
    ProtocolMessage m = receiveMessage(*workerEnd);
    CHECK(std::holds_alternative<ShutdownMsg>(m));
  });
  Backend cb;
  Coordinator coordinator(cb, plan, cfg, dataset);
  std::vector<std::unique_ptr<Stream>> conns;
  conns.push_back(std::move(coordinatorEnd));
  CHECK_THROWS_WITH_AS(coordinator.run(std::move(conns)), doctest::Contains("VersionMismatch"),
                       Error);
  futureWorker.join();

  // worker side symmetric check: a Shutdown instead of JoinAck raises
  auto [cEnd, wEnd] = makePipePair();
  std::thread rejecting([&] {
    receiveMessage(*cEnd);  // drop the Join
    sendMessage(*cEnd, ShutdownMsg{"protocol version mismatch"});
  });
  Backend wb;
  CHECK_THROWS_WITH_AS(runWorker(wb, *wEnd, "w"), doctest::Contains("VersionMismatch"), Error);
  rejecting.join();
}

TEST_CASE("dist: worker aborts with a diagnostic on corrupt payloads") {
  ModelConfig cfg;
  cfg.arch = "mlp";
  cfg.inputShape = {1, 4, 4};
  cfg.hidden = 3;
  cfg.classes = 2;

  auto [coordinatorEnd, workerEnd] = makePipePair();
  std::string workerError;
  std::thread workerThread([&] {
    Backend wb;
    try {
      runWorker(wb, *workerEnd, "victim");
    } catch (const Error& e) {
      workerError = e.what();
    }
  });
  receiveMessage(*coordinatorEnd);  // Join
  sendMessage(*coordinatorEnd, JoinAckMsg{0, modelConfigToJson(cfg)});
  // weights broadcast whose archive bytes are garbage; the worker reads the
  // batch assignment too before decoding, so send both
  std::vector<std::byte> garbage = {std::byte{0xDE}, std::byte{0xAD}, std::byte{0xBE},
                                    std::byte{0xEF}};
  sendMessage(*coordinatorEnd, WeightsBroadcastMsg{0, garbage});
  sendMessage(*coordinatorEnd, BatchAssignmentMsg{0, garbage});
  workerThread.join();
  CHECK(workerError.find("BadMagic") != std::string::npos);
}

TEST_CASE("dist: message sequence is deterministic across identical runs") {
  Backend b;
  Dataset dataset = synthDataset(b, 64, 4, {1, 6, 6}, 207);
  ModelConfig cfg;
  cfg.arch = "mlp";
  cfg.inputShape = {1, 6, 6};
  cfg.hidden = 4;
  cfg.classes = 4;
  cfg.seed = 3;

  auto trace = [&] {
    // manual worker records (tag, step) pairs in arrival order
    std::vector<std::pair<uint8_t, uint64_t>> seen;
    auto [coordinatorEnd, workerEnd] = makePipePair();
    std::thread workerThread([&] {
      Backend wb;
      Stream& s = *workerEnd;
      sendMessage(s, JoinMsg{kProtocolVersion, "tracer"});
      ModelConfig wcfg = modelConfigFromJson(std::get<JoinAckMsg>(receiveMessage(s)).modelConfig);
      auto model = buildModel(wb, wcfg);
      auto params = model->parameters();
      for (;;) {
        ProtocolMessage msg = receiveMessage(s);
        if (std::holds_alternative<ShutdownMsg>(msg)) {
          seen.emplace_back(static_cast<uint8_t>(MessageTag::Shutdown), 0);
          return;
        }
        const auto& weights = std::get<WeightsBroadcastMsg>(msg);
        seen.emplace_back(static_cast<uint8_t>(MessageTag::WeightsBroadcast), weights.step);
        ProtocolMessage batchMsg = receiveMessage(s);
        const auto& batch = std::get<BatchAssignmentMsg>(batchMsg);
        seen.emplace_back(static_cast<uint8_t>(MessageTag::BatchAssignment), batch.step);
        uint32_t localBatch = 0;
        std::vector<std::byte> gradBytes;
        tidy(wb, [&] {
          restoreModel(*model, decodeArchive(wb, weights.archive));
          TensorArchive ba = decodeArchive(wb, batch.archive);
          localBatch = static_cast<uint32_t>(ba.at("images").shape()[0]);
          zeroGrad(params);
          softmaxCrossEntropy(model->c(Variable(normalizeU8(ba.at("images")))).get(),
                              ba.at("labels"))
              .backward()
              .wait();
          gradBytes = encodeArchive(archiveGradients(*model));
          zeroGrad(params);
        });
        sendMessage(s, GradientUploadMsg{weights.step, 0, localBatch, gradBytes});
        ProtocolMessage ackMsg = receiveMessage(s);
        seen.emplace_back(static_cast<uint8_t>(MessageTag::StepAck), std::get<StepAckMsg>(ackMsg).step);
      }
    });
    RunPlan plan;
    plan.globalBatch = 8;
    plan.workers = 1;
    plan.steps = 4;
    plan.seed = 207;
    Backend cb;
    Coordinator coordinator(cb, plan, cfg, dataset);
    std::vector<std::unique_ptr<Stream>> conns;
    conns.push_back(std::move(coordinatorEnd));
    coordinator.run(std::move(conns));
    workerThread.join();
    return seen;
  };

  auto first = trace();
  auto second = trace();
  CHECK(first == second);
  REQUIRE(first.size() == 4 * 3 + 1);
  for (uint64_t s = 0; s < 4; ++s) {
    CHECK(first[s * 3].second == s);  // strictly increasing step numbers
  }
}

TEST_CASE("dist: loss trajectories identical for identical seeds") {
  Backend b;
  Dataset dataset = synthDataset(b, 128, 4, {1, 8, 8}, 208);
  ModelConfig cfg = smallCnnConfig(4);
  cfg.inputShape = {1, 8, 8};
  cfg.classes = 4;

  auto run = [&] {
    Backend rb;
    auto model = buildModel(rb, cfg);
    MomentumSGD opt(*model, 0.05f, 0.9f);
    return localTrainSteps(rb, *model, opt, dataset, 16, 208, 0, 6);
  };
  CHECK(run() == run());
}

TEST_CASE("dist: step stats decompose and conserve samples") {
  Backend b;
  Dataset dataset = synthDataset(b, 128, 4, {1, 8, 8}, 209);
  RunPlan plan;
  plan.regime = Regime::FixedLocal;
  plan.localBatch = 8;
  plan.workers = 3;
  plan.steps = 4;
  plan.seed = 209;
  ModelConfig cfg = smallCnnConfig(6);
  cfg.inputShape = {1, 8, 8};
  cfg.classes = 4;

  auto result = disttest::runInProcess(plan, cfg, dataset);
  REQUIRE(result.stats.size() == 4);
  for (const StepStats& s : result.stats) {
    CHECK(s.samples == 24);  // K * local batch
    CHECK(s.computeMs + s.commMs <= s.wallMs * 1.0001);
    CHECK(s.computeMs >= 0);
    CHECK(s.commMs >= 0);
    CHECK(s.bytesDown > 0);
    CHECK(s.bytesUp > 0);
  }
}
