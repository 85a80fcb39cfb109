#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "sksa/orchestrator.hpp"

namespace sksa {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    /// 0 picks an ephemeral port.
    int port = 8080;
    /// Value for Access-Control-Allow-Origin; empty disables CORS headers.
    std::string cors_origin;
    std::chrono::seconds session_ttl{30 * 60};
    std::string backend_chat = "mock";
    std::string backend_generate = "mock";
    std::string backend_embed = "mock";
};

/// Session service over HTTP:
///   POST /api/sessions                  {mode?, k?} -> 201 {session_id, mode}
///   POST /api/sessions/{id}/message     multipart: query, sketch (PNG) -> StepResult JSON
///   GET  /api/sessions/{id}/results     last ranked list + generated image reference
///   GET  /api/images/{digest}           generated image bytes
///   GET  /healthz                       {status, backend_modes, index_size}
class Service {
public:
    Service(std::shared_ptr<Orchestrator> orchestrator, ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread. Returns the bound port.
    int start();
    /// Binds and serves on the calling thread until stop().
    void run();
    /// Stops accepting requests and waits for in-flight steps to finish.
    void stop();

    int port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace sksa
