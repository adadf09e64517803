#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dmlt/bench.hpp"
#include "dmlt/csv.hpp"
#include "dmlt/dataset.hpp"
#include "dmlt/trainer.hpp"

using namespace dmlt;

namespace {

std::vector<int64_t> parseIntList(const std::string& csv) {
  std::vector<int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

std::string ownBinaryDir() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) raise(ErrorCode::IoError, "readlink /proc/self/exe failed");
  buf[n] = '\0';
  std::string path(buf);
  size_t slash = path.rfind('/');
  return path.substr(0, slash);
}

struct Child {
  pid_t pid = -1;
  int stdoutFd = -1;
};

Child spawn(const std::vector<std::string>& argv, bool pipeStdout) {
  int fds[2] = {-1, -1};
  if (pipeStdout && ::pipe(fds) != 0) raise(ErrorCode::IoError, "pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) raise(ErrorCode::IoError, "fork failed");
  if (pid == 0) {
    if (pipeStdout) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
    }
    std::vector<char*> args;
    for (const std::string& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execv(args[0], args.data());
    ::perror("execv");
    ::_exit(127);
  }
  if (pipeStdout) ::close(fds[1]);
  return Child{pid, pipeStdout ? fds[0] : -1};
}

// reads child stdout lines until one starts with `prefix`; returns the rest
std::string readLineWithPrefix(int fd, const std::string& prefix) {
  std::string buffer;
  char c;
  while (::read(fd, &c, 1) == 1) {
    if (c == '\n') {
      if (buffer.rfind(prefix, 0) == 0) return buffer.substr(prefix.size());
      buffer.clear();
    } else {
      buffer.push_back(c);
    }
  }
  raise(ErrorCode::ProtocolError, "child exited before printing '" + prefix + "'");
}

void killAll(std::vector<Child>& children) {
  for (Child& child : children) {
    if (child.pid > 0) ::kill(child.pid, SIGKILL);
  }
  for (Child& child : children) {
    if (child.pid > 0) ::waitpid(child.pid, nullptr, 0);
    if (child.stdoutFd >= 0) ::close(child.stdoutFd);
    child.pid = -1;
  }
}

int waitChild(Child& child) {
  int status = 0;
  ::waitpid(child.pid, &status, 0);
  child.pid = -1;
  if (child.stdoutFd >= 0) {
    ::close(child.stdoutFd);
    child.stdoutFd = -1;
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

int runStandalone(const std::string& model, const std::string& datasetArg,
                  const std::string& batchList, int64_t epochs, float lr, float momentum,
                  uint64_t seed, int64_t hidden, int64_t synthSize, const std::string& csvPath) {
  Backend backend;
  Dataset dataset;
  if (datasetArg == "synth" || datasetArg.empty()) {
    dataset = synthDataset(backend, synthSize, 10, {1, 12, 12}, seed);
  } else {
    dataset = loadDataset(backend, datasetArg);
  }
  ModelConfig cfg;
  cfg.arch = model;
  cfg.inputShape = {dataset.images.shape()[1], dataset.images.shape()[2],
                    dataset.images.shape()[3]};
  cfg.hidden = hidden;
  cfg.classes = dataset.classCount;
  cfg.seed = seed;

  std::vector<StandaloneRow> rows =
      benchStandalone(backend, cfg, dataset, parseIntList(batchList), epochs, lr, momentum, seed);
  writeStandaloneCsv(csvPath, rows);
  for (const StandaloneRow& r : rows)
    std::cout << "standalone batch=" << r.batchSize << " epoch=" << r.epoch
              << " wall_s=" << r.epochWallS << " samples_per_sec=" << r.samplesPerSec << "\n";
  std::cout << "wrote " << csvPath << std::endl;
  return 0;
}

int runDistributed(const std::string& workerList, const std::string& regime, int64_t batch,
                   int64_t steps, double bandwidthCap, double linkLatencyMs,
                   const std::string& datasetArg, float lr, float momentum, uint64_t seed,
                   const std::string& model, int64_t hidden, int64_t synthHw,
                   const std::string& csvPath) {
  std::string binDir = ownBinaryDir();
  std::string coordinatorBin = binDir + "/coordinator";
  std::string workerBin = binDir + "/worker";
  std::vector<DistributedRow> rows;

  for (int64_t workers : parseIntList(workerList)) {
    std::string stepCsv = "/tmp/dmlt_bench_" + std::to_string(::getpid()) + "_" +
                          regime + "_" + std::to_string(workers) + ".csv";
    std::vector<std::string> coordinatorArgs = {
        coordinatorBin, "--listen", "127.0.0.1:0",
        "--regime", regime,
        "--workers", std::to_string(workers),
        "--steps", std::to_string(steps),
        "--lr", std::to_string(lr),
        "--momentum", std::to_string(momentum),
        "--seed", std::to_string(seed),
        "--model", model,
        "--hidden", std::to_string(hidden),
        "--synth-hw", std::to_string(synthHw),
        "--csv", stepCsv,
    };
    coordinatorArgs.push_back(regime == "fixed_local" ? "--local-batch" : "--global-batch");
    coordinatorArgs.push_back(std::to_string(batch));
    if (bandwidthCap > 0) {
      coordinatorArgs.push_back("--bandwidth-cap");
      coordinatorArgs.push_back(std::to_string(bandwidthCap));
    }
    if (linkLatencyMs > 0) {
      coordinatorArgs.push_back("--link-latency-ms");
      coordinatorArgs.push_back(std::to_string(linkLatencyMs));
    }
    if (!datasetArg.empty() && datasetArg != "synth") {
      coordinatorArgs.push_back("--dataset");
      coordinatorArgs.push_back(datasetArg);
    }

    std::vector<Child> children;
    try {
      children.push_back(spawn(coordinatorArgs, true));
      std::string portText = readLineWithPrefix(children[0].stdoutFd, "LISTENING ");
      uint16_t port = static_cast<uint16_t>(std::stoi(portText));
      for (int64_t k = 0; k < workers; ++k)
        children.push_back(spawn({workerBin, "--connect", "127.0.0.1:" + std::to_string(port),
                                  "--name", "bench-" + std::to_string(k)},
                                 false));
      bool failed = false;
      for (size_t i = 1; i < children.size(); ++i)
        if (waitChild(children[i]) != 0) failed = true;
      if (waitChild(children[0]) != 0) failed = true;
      if (failed) {
        std::cerr << "sweep point K=" << workers << " failed; skipping\n";
        continue;
      }

      CsvTable table = readCsv(stepCsv);
      std::vector<StepStats> stats;
      for (size_t r = 0; r < table.rows.size(); ++r) {
        StepStats s;
        s.wallMs = table.number(r, table.column("wall_ms"));
        s.computeMs = table.number(r, table.column("compute_ms"));
        s.commMs = table.number(r, table.column("comm_ms"));
        s.samples = static_cast<int64_t>(table.number(r, table.column("samples")));
        s.samplesPerSec = table.number(r, table.column("samples_per_sec"));
        stats.push_back(s);
      }
      RunPlan plan;
      plan.regime = regimeFromName(regime);
      plan.globalBatch = batch;
      plan.localBatch = batch;
      plan.workers = workers;
      rows.push_back(summarizeRun(workers, plan, stats));
      const DistributedRow& row = rows.back();
      std::cout << "distributed K=" << workers << " regime=" << regime
                << " median samples_per_sec=" << row.samplesPerSec
                << " (compute " << row.computeS << "s, comm " << row.commS << "s)" << std::endl;
    } catch (const std::exception& e) {
      std::cerr << "sweep point K=" << workers << ": " << e.what() << "\n";
      killAll(children);
    }
  }
  writeDistributedCsv(csvPath, rows);
  std::cout << "wrote " << csvPath << std::endl;
  return rows.empty() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training throughput benchmarks"};
  app.require_subcommand(1);

  auto* standalone = app.add_subcommand("standalone", "single-process epoch timing per batch size");
  std::string saModel = "small_cnn", saDataset = "synth", saBatches = "4,8,16,32,64";
  int64_t saEpochs = 3, saHidden = 8, saSynthSize = 2560;
  float saLr = 0.05f, saMomentum = 0.9f;
  uint64_t saSeed = 1;
  std::string saCsv = "standalone.csv";
  standalone->add_option("--model", saModel, "mlp | small_cnn");
  standalone->add_option("--dataset", saDataset, "PATH or 'synth'");
  standalone->add_option("--batch-sizes", saBatches, "ascending comma list, e.g. 4,8,...,512");
  standalone->add_option("--epochs", saEpochs, "timed epochs per batch size");
  standalone->add_option("--lr", saLr, "learning rate");
  standalone->add_option("--momentum", saMomentum, "momentum");
  standalone->add_option("--seed", saSeed, "seed");
  standalone->add_option("--hidden", saHidden, "hidden width / base channels");
  standalone->add_option("--synth-size", saSynthSize, "synthetic dataset size");
  standalone->add_option("--csv", saCsv, "output CSV path");

  auto* distributed = app.add_subcommand("distributed", "coordinator+workers sweep over K");
  std::string diWorkers = "1,2,4,8,16", diRegime = "fixed_global", diDataset = "synth";
  int64_t diBatch = 64, diSteps = 25, diHidden = 8, diSynthHw = 12;
  double diCap = 0.0, diLatencyMs = 0.0;
  float diLr = 0.05f, diMomentum = 0.9f;
  uint64_t diSeed = 1;
  std::string diCsv = "distributed.csv", diModel = "small_cnn";
  distributed->add_option("--workers", diWorkers, "comma list of worker counts");
  distributed->add_option("--regime", diRegime, "fixed_global | fixed_local");
  distributed->add_option("--batch", diBatch, "global (fixed_global) or local (fixed_local) batch");
  distributed->add_option("--steps", diSteps, "steps per sweep point");
  distributed->add_option("--bandwidth-cap", diCap, "shared link cap, bits/sec (0 = off)");
  distributed->add_option("--link-latency-ms", diLatencyMs, "per-message link latency, ms");
  distributed->add_option("--dataset", diDataset, "PATH or 'synth'");
  distributed->add_option("--lr", diLr, "learning rate");
  distributed->add_option("--momentum", diMomentum, "momentum");
  distributed->add_option("--seed", diSeed, "seed");
  distributed->add_option("--model", diModel, "mlp | small_cnn");
  distributed->add_option("--hidden", diHidden, "hidden width / base channels");
  distributed->add_option("--synth-hw", diSynthHw, "synthetic image height/width");
  distributed->add_option("--csv", diCsv, "output CSV path");

  auto* report = app.add_subcommand("report", "summarize benchmark CSVs");
  std::vector<std::string> reportCsvs;
  report->add_option("--csv", reportCsvs, "CSV path(s)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (standalone->parsed())
      return runStandalone(saModel, saDataset, saBatches, saEpochs, saLr, saMomentum, saSeed,
                           saHidden, saSynthSize, saCsv);
    if (distributed->parsed())
      return runDistributed(diWorkers, diRegime, diBatch, diSteps, diCap, diLatencyMs, diDataset,
                            diLr, diMomentum, diSeed, diModel, diHidden, diSynthHw, diCsv);
    if (report->parsed()) {
      std::cout << emitReport(reportCsvs);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
