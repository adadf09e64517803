#include <iostream>

#include <CLI11.hpp>

#include "dmlt/stream.hpp"
#include "dmlt/worker.hpp"

using namespace dmlt;

int main(int argc, char** argv) {
  CLI::App app{"training worker client"};

  std::string connect;
  std::string name = "worker";
  app.add_option("--connect", connect, "coordinator host:port")->required();
  app.add_option("--name", name, "worker name reported at join");
  CLI11_PARSE(app, argc, argv);

  try {
    auto [host, port] = parseHostPort(connect);
    std::unique_ptr<Stream> stream =
        tcpConnectRetry(host, port, std::chrono::milliseconds(10000));
    Backend backend;
    WorkerReport report = runWorker(backend, *stream, name);
    std::cerr << "worker '" << name << "': " << report.stepsCompleted
              << " steps, shutdown: " << report.shutdownReason << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "worker '" << name << "': " << e.what() << "\n";
    return 1;
  }
}
