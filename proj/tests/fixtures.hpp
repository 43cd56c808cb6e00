#pragma once

#include <chrono>
#include <memory>
#include <vector>

#include "rcc/llmgateway.hpp"

namespace fixture {

struct MockBackend {
  std::shared_ptr<rcc::llm::MockTransport> transport;
  std::shared_ptr<rcc::llm::Client> client;
  std::shared_ptr<std::vector<std::chrono::milliseconds>> sleeps;
};

// A client over a scripted mock whose backoff sleeps are recorded, not slept.
inline MockBackend mock_backend(std::vector<rcc::llm::mock::Behavior> script = {rcc::llm::mock::Rule{}},
                                int max_retries = 3, int max_in_flight = 4) {
  MockBackend b;
  b.transport = rcc::llm::mock_script(std::move(script));
  b.sleeps = std::make_shared<std::vector<std::chrono::milliseconds>>();
  rcc::llm::BackendConfig cfg;
  cfg.kind = rcc::llm::BackendKind::Mock;
  cfg.max_retries = max_retries;
  cfg.max_in_flight = max_in_flight;
  auto sleeps = b.sleeps;
  b.client = std::make_shared<rcc::llm::Client>(cfg, b.transport, rcc::llm::TemplateStore::builtin(),
                                                [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d); });
  return b;
}

}  // namespace fixture
