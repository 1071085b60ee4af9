#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/config.hpp"
#include "anchormem/drift_monitor.hpp"
#include "anchormem/retrieval_engine.hpp"

namespace anchormem {

struct ChatResult {
  std::string agent_id;
  std::string session_id;
  EngineMode mode = EngineMode::kHybrid;
  Answer answer;
  std::int64_t user_entry_id = 0;
  std::int64_t agent_entry_id = 0;
};

struct AnchorStatus {
  AnchorKind kind = AnchorKind::kSoul;
  bool enabled = true;
  double weight = 0.0;
  double normalized_weight = 0.0;
  std::size_t items = 0;
};

struct AgentSummary {
  std::string agent_id;
  std::vector<AnchorStatus> anchors;
  std::size_t memory_entries = 0;
  std::int64_t last_entry_id = 0;
  bool has_baseline = false;
  bool degraded = false;
};

struct SessionState {
  std::string session_id;
  std::string agent_id;
  EngineMode mode = EngineMode::kHybrid;
  std::size_t turn_count = 0;
  std::string created_at;
  std::string last_seen;
};

/// Owns every agent under the configured root directory. Turns on one agent
/// are serialized: an operation that cannot take the agent's turn lock within
/// the configured wait fails with kConflict.
class AgentService {
 public:
  /// Builds the backend from the config when none is passed in.
  explicit AgentService(EngineConfig config, std::unique_ptr<LlmBackend> backend = nullptr);
  /// Uses a caller-owned backend.
  AgentService(EngineConfig config, LlmBackend& backend);
  ~AgentService();

  const EngineConfig& config() const { return config_; }
  const RetrievalEngine& engine() const { return *engine_; }

  std::vector<std::string> list_agents() const;
  /// kIdCollision when the agent exists; kInvalidArgument for ids outside [A-Za-z0-9_.-].
  AgentSummary create_agent(const std::string& agent_id, const std::string& soul_text = {});
  AgentSummary fork_agent(const std::string& parent_id, const std::string& child_id);
  AgentSummary summary(const std::string& agent_id);

  ChatResult chat(const std::string& agent_id, const std::string& session_id, const std::string& message,
                  std::optional<EngineMode> mode = std::nullopt);

  std::string get_anchor(const std::string& agent_id, AnchorKind kind);
  std::vector<AnchorItem> put_anchor(const std::string& agent_id, AnchorKind kind, const std::string& text);
  AgentSummary set_anchor_enabled(const std::string& agent_id, AnchorKind kind, bool enabled);

  Baseline capture_baseline(const std::string& agent_id);
  /// kNoBaseline when no baseline was captured.
  DriftReport drift(const std::string& agent_id, std::optional<std::size_t> threshold = std::nullopt);

  std::vector<RouteRecord> routes(const std::string& agent_id, std::size_t limit);
  /// kNotFound when the session has no entries for this agent.
  SessionState session(const std::string& agent_id, const std::string& session_id);

 private:
  struct Slot;

  void init();
  std::shared_ptr<Slot> find(const std::string& agent_id) const;
  std::unique_lock<std::timed_mutex> lock_turn(Slot& slot) const;
  AgentSummary summarize(const Agent& agent) const;
  void apply_weight_overrides(AnchorSet& set) const;

  EngineConfig config_;
  std::unique_ptr<LlmBackend> owned_backend_;
  LlmBackend& backend_;
  std::unique_ptr<RetrievalEngine> engine_;
  std::unique_ptr<DriftMonitor> monitor_;
  ProbeSet probes_;

  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> agents_;
};

/// Exit status the CLI uses for an error: 2 for configuration, 3 for backend, 1 otherwise.
int exit_code_for(ErrorCode code);
/// HTTP status the API uses for an error.
int http_status_for(ErrorCode code);

}  // namespace anchormem
