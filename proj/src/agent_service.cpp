#include "anchormem/agent_service.hpp"

#include <algorithm>
#include <iostream>
#include <regex>

#include "anchormem/error.hpp"

namespace anchormem {

struct AgentService::Slot {
  std::unique_ptr<Agent> agent;
  std::timed_mutex turn;
};

namespace {

void check_agent_id(const std::string& id) {
  static const std::regex pattern("[A-Za-z0-9_.-]{1,128}");
  if (!std::regex_match(id, pattern) || id == "." || id == "..") {
    throw Error(ErrorCode::kInvalidArgument, "invalid agent id '" + id + "'");
  }
}

bool looks_like_agent_dir(const std::filesystem::path& dir) {
  for (AnchorKind kind : kAllAnchorKinds) {
    if (std::filesystem::exists(dir / anchor_filename(kind))) return true;
  }
  return false;
}

}  // namespace

AgentService::AgentService(EngineConfig config, std::unique_ptr<LlmBackend> backend)
    : config_(std::move(config)),
      owned_backend_(backend ? std::move(backend) : make_backend(config_.backend)),
      backend_(*owned_backend_) {
  init();
}

AgentService::AgentService(EngineConfig config, LlmBackend& backend)
    : config_(std::move(config)), backend_(backend) {
  init();
}

void AgentService::init() {
  config_.validate();
  engine_ = std::make_unique<RetrievalEngine>(backend_, config_.engine,
                                              RouterOptions{config_.threshold_source, config_.cost_params, {}});
  monitor_ = std::make_unique<DriftMonitor>(*engine_);
  probes_ = ProbeSet::standard();

  std::error_code ec;
  std::filesystem::create_directories(config_.root_directory, ec);
  if (ec) throw Error(ErrorCode::kConfig, "cannot create root " + config_.root_directory.string() + ": " + ec.message());
  for (const auto& entry : std::filesystem::directory_iterator(config_.root_directory)) {
    if (!entry.is_directory() || !looks_like_agent_dir(entry.path())) continue;
    try {
      AnchorSet set = load_anchor_set(entry.path());
      apply_weight_overrides(set);
      auto slot = std::make_shared<Slot>();
      slot->agent = std::make_unique<Agent>(std::move(set), backend_);
      agents_.emplace(entry.path().filename().string(), std::move(slot));
    } catch (const Error& e) {
      std::cerr << "[service] skipping " << entry.path() << ": " << e.what() << '\n';
    }
  }
}

AgentService::~AgentService() = default;

void AgentService::apply_weight_overrides(AnchorSet& set) const {
  for (const auto& [kind, w] : config_.anchor_weights) set.at(kind).weight = w;
}

std::shared_ptr<AgentService::Slot> AgentService::find(const std::string& agent_id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = agents_.find(agent_id);
  if (it == agents_.end()) throw Error(ErrorCode::kNotFound, "no agent '" + agent_id + "'");
  return it->second;
}

std::unique_lock<std::timed_mutex> AgentService::lock_turn(Slot& slot) const {
  std::unique_lock lock(slot.turn, std::defer_lock);
  if (!lock.try_lock_for(config_.turn_wait)) {
    throw Error(ErrorCode::kConflict, "agent '" + slot.agent->anchors().agent_id + "' is busy with another turn");
  }
  return lock;
}

AgentSummary AgentService::summarize(const Agent& agent) const {
  const AnchorSet& set = agent.anchors();
  AgentSummary s;
  s.agent_id = set.agent_id;
  const auto normalized = set.normalized_weights();
  for (AnchorKind kind : kAllAnchorKinds) {
    const Anchor& a = set.at(kind);
    AnchorStatus st;
    st.kind = kind;
    st.enabled = a.enabled;
    st.weight = a.weight;
    auto it = normalized.find(kind);
    st.normalized_weight = it == normalized.end() ? 0.0 : it->second;
    st.items = kind == AnchorKind::kMemory ? set.memory_log.size() : a.items.size();
    s.anchors.push_back(st);
  }
  s.memory_entries = set.memory_log.size();
  s.last_entry_id = set.last_entry_id();
  s.has_baseline = !set.directory.empty() && std::filesystem::exists(set.directory / "IDENTITY_HASH.baseline");
  s.degraded = assemble_context(set, {}, config_.engine.budget_tokens).degraded;
  return s;
}

std::vector<std::string> AgentService::list_agents() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, slot] : agents_) ids.push_back(id);
  return ids;
}

AgentSummary AgentService::create_agent(const std::string& agent_id, const std::string& soul_text) {
  check_agent_id(agent_id);
  std::unique_lock lock(registry_mutex_);
  const auto dir = config_.root_directory / agent_id;
  if (agents_.count(agent_id) || std::filesystem::exists(dir)) {
    throw Error(ErrorCode::kIdCollision, "agent '" + agent_id + "' already exists");
  }
  AnchorSet set = make_anchor_set(agent_id, dir);
  apply_weight_overrides(set);
  if (!soul_text.empty()) {
    set.at(AnchorKind::kSoul).raw_text = soul_text;
    set.at(AnchorKind::kSoul).items = parse_anchor(AnchorKind::kSoul, soul_text);
  }
  save_anchor_set(set);
  auto slot = std::make_shared<Slot>();
  slot->agent = std::make_unique<Agent>(std::move(set), backend_);
  AgentSummary s = summarize(*slot->agent);
  agents_.emplace(agent_id, std::move(slot));
  return s;
}

AgentSummary AgentService::fork_agent(const std::string& parent_id, const std::string& child_id) {
  check_agent_id(child_id);
  auto parent = find(parent_id);
  auto turn = lock_turn(*parent);
  std::unique_lock lock(registry_mutex_);
  if (agents_.count(child_id)) throw Error(ErrorCode::kIdCollision, "agent '" + child_id + "' already exists");
  AnchorSet child = fork_anchor_set(parent->agent->anchors(), child_id);
  auto slot = std::make_shared<Slot>();
  slot->agent = std::make_unique<Agent>(std::move(child), backend_);
  AgentSummary s = summarize(*slot->agent);
  agents_.emplace(child_id, std::move(slot));
  return s;
}

AgentSummary AgentService::summary(const std::string& agent_id) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  return summarize(*slot->agent);
}

ChatResult AgentService::chat(const std::string& agent_id, const std::string& session_id,
                              const std::string& message, std::optional<EngineMode> mode) {
  if (message.empty()) throw Error(ErrorCode::kEmptyPrompt, "message must be non-empty");
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  ChatResult out;
  out.agent_id = agent_id;
  out.session_id = session_id;
  out.mode = mode.value_or(config_.mode);
  out.answer = engine_->answer(*slot->agent, message, out.mode, session_id);
  const auto& log = slot->agent->anchors().memory_log;
  out.agent_entry_id = log.back().entry_id;
  out.user_entry_id = log[log.size() - 2].entry_id;
  return out;
}

std::string AgentService::get_anchor(const std::string& agent_id, AnchorKind kind) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  return anchor_text(slot->agent->anchors(), kind);
}

std::vector<AnchorItem> AgentService::put_anchor(const std::string& agent_id, AnchorKind kind,
                                                 const std::string& text) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  write_anchor(slot->agent->anchors(), kind, text);
  return slot->agent->anchors().at(kind).items;
}

AgentSummary AgentService::set_anchor_enabled(const std::string& agent_id, AnchorKind kind, bool enabled) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  anchormem::set_anchor_enabled(slot->agent->anchors(), kind, enabled);
  return summarize(*slot->agent);
}

Baseline AgentService::capture_baseline(const std::string& agent_id) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  Baseline b = monitor_->make_baseline(*slot->agent, probes_, config_.mode);
  save_baseline(slot->agent->anchors().directory, b);
  return b;
}

DriftReport AgentService::drift(const std::string& agent_id, std::optional<std::size_t> threshold) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  auto baseline = load_baseline(slot->agent->anchors().directory);
  if (!baseline) throw Error(ErrorCode::kNoBaseline, "agent '" + agent_id + "' has no identity baseline");
  return monitor_->detect_drift(*slot->agent, *baseline, threshold.value_or(config_.drift_threshold), probes_,
                                config_.mode);
}

std::vector<RouteRecord> AgentService::routes(const std::string& agent_id, std::size_t limit) {
  auto slot = find(agent_id);
  return slot->agent->routes().recent(limit);
}

SessionState AgentService::session(const std::string& agent_id, const std::string& session_id) {
  auto slot = find(agent_id);
  auto turn = lock_turn(*slot);
  SessionState s;
  s.session_id = session_id;
  s.agent_id = agent_id;
  s.mode = config_.mode;
  std::size_t user_turns = 0;
  for (const MemoryEntry& e : slot->agent->anchors().memory_log) {
    if (e.session_id != session_id) continue;
    if (s.created_at.empty()) s.created_at = format_timestamp(e.timestamp);
    s.last_seen = format_timestamp(e.timestamp);
    if (e.role == Role::kUser) ++user_turns;
  }
  if (s.created_at.empty()) throw Error(ErrorCode::kNotFound, "no session '" + session_id + "'");
  s.turn_count = user_turns;
  return s;
}

int exit_code_for(ErrorCode code) {
  if (code == ErrorCode::kConfig || code == ErrorCode::kInvalidParams) return 2;
  if (is_backend_error(code)) return 3;
  return 1;
}

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kNoBaseline:
    case ErrorCode::kIdCollision:
      return 409;
    case ErrorCode::kForbidden:
      return 403;
    case ErrorCode::kEmptyPrompt:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidParams:
    case ErrorCode::kMalformedEntry:
    case ErrorCode::kProbeSetVersionMismatch:
      return 422;
    default:
      break;
  }
  if (is_backend_error(code)) return 502;
  return 500;
}

}  // namespace anchormem
