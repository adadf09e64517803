#include <iostream>

#include <CLI11.hpp>

#include "dmlt/archive.hpp"
#include "dmlt/coordinator.hpp"
#include "dmlt/dataset.hpp"

using namespace dmlt;

int main(int argc, char** argv) {
  CLI::App app{"data-parallel SGD coordinator (parameter server)"};

  std::string listen = "127.0.0.1:0";
  std::string regime = "fixed_global";
  int64_t globalBatch = 64;
  int64_t localBatch = 64;
  int64_t workers = 1;
  int64_t steps = 10;
  float lr = 0.05f;
  float momentum = 0.9f;
  uint64_t seed = 1;
  double bandwidthCap = 0.0;
  double linkLatencyMs = 0.0;
  std::string datasetPath;
  std::string csvPath;
  std::string modelArch = "small_cnn";
  int64_t hidden = 8;
  int64_t synthHw = 12;

  app.add_option("--listen", listen, "host:port to listen on (port 0 picks one)");
  app.add_option("--regime", regime, "fixed_global | fixed_local");
  app.add_option("--global-batch", globalBatch, "global batch size (fixed_global)");
  app.add_option("--local-batch", localBatch, "per-worker batch size (fixed_local)");
  app.add_option("--workers", workers, "number of workers to wait for")->required();
  app.add_option("--steps", steps, "training steps to run");
  app.add_option("--lr", lr, "learning rate");
  app.add_option("--momentum", momentum, "momentum coefficient");
  app.add_option("--seed", seed, "rng seed for init and batch schedule");
  app.add_option("--bandwidth-cap", bandwidthCap, "shared link cap in bits/sec (0 = off)");
  app.add_option("--link-latency-ms", linkLatencyMs, "per-message send latency in ms (0 = off)");
  app.add_option("--dataset", datasetPath, ".dmlt dataset archive (default: synthetic)");
  app.add_option("--csv", csvPath, "per-step stats CSV output path");
  app.add_option("--model", modelArch, "mlp | small_cnn");
  app.add_option("--hidden", hidden, "hidden width / base channels");
  app.add_option("--synth-hw", synthHw, "synthetic image height/width");
  std::string saveModelPath;
  app.add_option("--save-model", saveModelPath, "write final weights to this .dmlt file");
  CLI11_PARSE(app, argc, argv);

  try {
    Backend backend;
    Dataset dataset;
    if (datasetPath.empty()) {
      dataset = synthDataset(backend, 2560, 10, {1, synthHw, synthHw}, seed);
    } else {
      dataset = loadDataset(backend, datasetPath);
    }

    RunPlan plan;
    plan.regime = regimeFromName(regime);
    plan.globalBatch = globalBatch;
    plan.localBatch = localBatch;
    plan.workers = workers;
    plan.steps = steps;
    plan.lr = lr;
    plan.momentum = momentum;
    plan.seed = seed;
    if (bandwidthCap > 0) plan.bandwidthCapBps = bandwidthCap;
    plan.linkLatencySec = linkLatencyMs / 1000.0;

    ModelConfig cfg;
    cfg.arch = modelArch;
    cfg.inputShape = {dataset.images.shape()[1], dataset.images.shape()[2],
                      dataset.images.shape()[3]};
    cfg.hidden = hidden;
    cfg.classes = dataset.classCount;
    cfg.seed = seed;

    auto [host, port] = parseHostPort(listen);
    TcpListener listener(host, port);
    std::cout << "LISTENING " << listener.port() << std::endl;

    std::vector<std::unique_ptr<Stream>> connections;
    for (int64_t k = 0; k < workers; ++k) connections.push_back(listener.accept());
    std::cerr << "coordinator: " << workers << " workers connected, running " << steps
              << " steps\n";

    Coordinator coordinator(backend, plan, cfg, std::move(dataset));
    coordinator.run(std::move(connections));
    if (!csvPath.empty()) coordinator.writeCsv(csvPath);
    if (!saveModelPath.empty()) saveArchive(archiveModel(coordinator.model()), saveModelPath);

    std::vector<double> rates;
    for (const StepStats& s : coordinator.stats()) rates.push_back(s.samplesPerSec);
    double med = 0;
    if (!rates.empty()) {
      std::sort(rates.begin(), rates.end());
      med = rates.size() % 2 ? rates[rates.size() / 2]
                             : 0.5 * (rates[rates.size() / 2 - 1] + rates[rates.size() / 2]);
    }
    std::cout << "DONE steps=" << coordinator.stats().size() << " median_samples_per_sec=" << med
              << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "coordinator: " << e.what() << "\n";
    return 1;
  }
}
