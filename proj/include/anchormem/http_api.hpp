#pragma once

#include <memory>
#include <string>

#include "anchormem/agent_service.hpp"

namespace anchormem {

/// JSON API under /v1 backed by an AgentService.
///
///   GET  /v1/health
///   GET  /v1/agents                         POST /v1/agents {agent_id, soul?}
///   GET  /v1/agents/{id}                    POST /v1/agents/{id}/fork {agent_id}
///   POST /v1/agents/{id}/chat {session_id, message, mode?}
///   GET  /v1/agents/{id}/anchors/{kind}     PUT  /v1/agents/{id}/anchors/{kind} (raw text body)
///   POST /v1/agents/{id}/failures {kind, enabled}
///   POST /v1/agents/{id}/baseline           GET|POST /v1/agents/{id}/drift[?threshold=N]
///   GET  /v1/agents/{id}/routes?limit=N     GET  /v1/agents/{id}/sessions/{session_id}
///
/// Errors are {"error": <code>, "message": ...} with 404 / 409 / 403 / 422 / 502 / 500.
class ApiServer {
 public:
  explicit ApiServer(AgentService& service);
  ~ApiServer();

  /// Blocks until stop(). Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it (or -1); serve with listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace anchormem
