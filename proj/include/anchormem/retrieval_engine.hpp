#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/error.hpp"
#include "anchormem/memory_index.hpp"
#include "anchormem/query_router.hpp"

namespace anchormem {

/// Inject: whole log in context. Rag: top-k retrieval. Hybrid: routed RAG/RLM.
enum class EngineMode { kInject, kRag, kHybrid };
std::string_view to_string(EngineMode mode);
std::optional<EngineMode> parse_engine_mode(std::string_view text);

/// Whitespace-token count x 1.3, rounded up.
std::size_t estimate_tokens(std::string_view text);
std::size_t estimate_tokens_for_words(std::size_t words);

inline constexpr std::string_view kDegradedMarker = "[degraded mode: no identity anchors available]";

/// A piece of evidence (one memory entry or one synthesized summary) with
/// the entries it stands for. Evidence lists are kept in chronological order.
struct EvidenceUnit {
  std::string text;
  std::vector<std::int64_t> entry_ids;
};

struct AssembledContext {
  std::string identity_section;
  std::string evidence_section;
  std::size_t token_estimate = 0;
  bool truncated = false;
  /// No identity anchor contributed anything.
  bool degraded = false;
  std::vector<std::int64_t> provenance;
  /// RAG only: cosine score per retrieved entry, same order as provenance.
  std::vector<double> scores;
  /// RLM only: number of leaf chunks.
  std::size_t chunk_count = 0;
};

struct ChunkSummary {
  std::size_t chunk_id = 0;
  std::vector<std::int64_t> covered_entry_ids;
  std::string summary_text;
  int level = 0;  // 0 = leaf
};

/// Levels of an RLM reduction, leaves first.
struct SynthesisTrace {
  std::vector<std::vector<ChunkSummary>> levels;
  std::size_t summarize_calls = 0;
};

/// Thrown when the backend fails part-way through RLM synthesis; carries
/// every level that completed before the failure.
class PartialSynthesisError : public Error {
 public:
  PartialSynthesisError(const std::string& message, SynthesisTrace completed)
      : Error(ErrorCode::kPartialSynthesis, message), completed_(std::move(completed)) {}
  const SynthesisTrace& completed() const { return completed_; }

 private:
  SynthesisTrace completed_;
};

/// Backend failure raised after the router had already fallen back to RAG.
class FallbackBackendError : public Error {
 public:
  using Error::Error;
};

/// Render an entry the way it appears in evidence and RLM chunks.
std::string render_entry(const MemoryEntry& entry);

/// Builds the identity and evidence sections. Enabled anchors are laid out
/// as Soul, IdentityHashFile, Relations, Procedures, Salience, then the
/// evidence. Over budget, units are dropped in this order until the estimate
/// fits: LOW salience, unleveled salience, MEDIUM salience, evidence (oldest
/// first), HIGH salience, then the remaining identity lines from the back.
/// A disabled Memory anchor discards all evidence.
AssembledContext assemble_context(const AnchorSet& set, const std::vector<EvidenceUnit>& evidence,
                                  std::size_t budget_tokens);

/// Prompt handed to generate(): identity (or the degraded marker), evidence, then the query.
std::string build_prompt(const AssembledContext& context, std::string_view query);

/// Number of summarize calls an RLM reduction makes over n entries.
std::size_t rlm_call_count(std::size_t n, std::size_t chunk_size, std::size_t fanin);

struct EngineOptions {
  std::size_t k = 5;
  std::size_t chunk_size = 32;
  std::size_t fanin = 8;
  std::size_t budget_tokens = 4096;
  int max_output_tokens = 512;
  /// Concurrent leaf summarize calls in one RLM invocation.
  std::size_t leaf_parallelism = 4;
  /// Route history keeps query hashes only unless this is set.
  bool store_query_text = false;

  void validate() const;
};

/// Per-agent runtime state: anchors + log, the vector index over the log, and
/// the route history. Not copyable; the service keeps one per agent.
class Agent {
 public:
  /// Indexes the whole log. Route history is read from ROUTES.jsonl in the
  /// agent directory when the set is persisted.
  Agent(AnchorSet set, LlmBackend& backend);

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  AnchorSet& anchors() { return set_; }
  const AnchorSet& anchors() const { return set_; }
  MemoryIndex& index() { return index_; }
  const MemoryIndex& index() const { return index_; }
  RouteHistory& routes() { return routes_; }
  const RouteHistory& routes() const { return routes_; }

  /// Indexes log entries missing from the index (after a failed embed).
  void catch_up_index(LlmBackend& backend);

 private:
  AnchorSet set_;
  MemoryIndex index_;
  RouteHistory routes_;
};

struct Answer {
  std::string response;
  std::optional<RouteDecision> decision;
  AssembledContext context;
  Seconds retrieval_latency{0.0};
  Seconds total_latency{0.0};
};

class RetrievalEngine {
 public:
  RetrievalEngine(LlmBackend& backend, EngineOptions options, RouterOptions router_options = {});

  const EngineOptions& options() const { return options_; }
  const QueryRouter& router() const { return router_; }
  LlmBackend& backend() const { return backend_; }

  /// Entire log as evidence; oldest entries are dropped first when over budget.
  AssembledContext retrieve_inject(const AnchorSet& set) const;

  /// Top-k entries by cosine, presented chronologically.
  AssembledContext retrieve_rag(const AnchorSet& set, const MemoryIndex& index, std::string_view query,
                                std::size_t k) const;

  /// Summarize chunks of `chunk_size` entries, then reduce groups of `fanin`
  /// summaries until one remains; the root summary is the evidence.
  AssembledContext rlm_synthesize(const AnchorSet& set, std::string_view query, std::size_t chunk_size,
                                  std::size_t fanin, SynthesisTrace* trace = nullptr) const;

  /// Retrieval + generation without touching the log or route history.
  Answer respond(const Agent& agent, std::string_view query, EngineMode mode) const;

  /// One exchange: respond, then append (user, agent) entries to the log,
  /// index them, and record the route decision. If the backend fails the
  /// user turn is still appended and the error rethrown.
  Answer answer(Agent& agent, std::string_view query, EngineMode mode, const std::string& session_id) const;

 private:
  LlmBackend& backend_;
  EngineOptions options_;
  QueryRouter router_;
};

}  // namespace anchormem
