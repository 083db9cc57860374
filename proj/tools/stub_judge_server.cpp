#include <fmt/format.h>

#include "CLI11.hpp"
#include "qdiag/error.hpp"
#include "qdiag/stub_judge.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Scripted chat-completions server standing in for the judge panel."};
  std::string scenario;
  int port = 8089;
  std::string host = "127.0.0.1";
  app.add_option("--scenario", scenario, "Scenario file (JSON)")->required();
  app.add_option("--port", port, "Port");
  app.add_option("--host", host, "Bind address");
  CLI11_PARSE(app, argc, argv);
  try {
    qdiag::StubJudgeServer server(qdiag::load_scenario(scenario));
    fmt::print("stub judge listening on http://{}:{}\n", host, port);
    std::fflush(stdout);
    server.listen_blocking(host, port);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
