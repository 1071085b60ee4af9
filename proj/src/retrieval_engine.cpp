#include "anchormem/retrieval_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

namespace anchormem {

namespace {

constexpr AnchorKind kIdentityOrder[] = {AnchorKind::kSoul, AnchorKind::kIdentityHashFile, AnchorKind::kRelations,
                                         AnchorKind::kProcedures, AnchorKind::kSalience};

// Drop ranks, lowest dropped first.
constexpr int kRankLow = 0;
constexpr int kRankUnleveled = 1;
constexpr int kRankMedium = 2;
constexpr int kRankEvidence = 3;
constexpr int kRankHigh = 4;
constexpr int kRankIdentity = 5;

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

struct Unit {
  std::size_t words = 0;
  int rank = kRankIdentity;
  std::size_t position = 0;  // presentation order
  bool kept = true;
};

int salience_rank(const AnchorItem& item) {
  if (item.flags.count("HEADING")) return kRankIdentity;
  if (!item.level) return kRankUnleveled;
  switch (*item.level) {
    case SalienceLevel::kLow: return kRankLow;
    case SalienceLevel::kMedium: return kRankMedium;
    case SalienceLevel::kHigh: return kRankHigh;
  }
  return kRankUnleveled;
}

const MemoryEntry* find_entry(const std::vector<MemoryEntry>& log, std::int64_t id) {
  auto it = std::lower_bound(log.begin(), log.end(), id,
                             [](const MemoryEntry& e, std::int64_t v) { return e.entry_id < v; });
  return it != log.end() && it->entry_id == id ? &*it : nullptr;
}

}  // namespace

std::string_view to_string(EngineMode mode) {
  switch (mode) {
    case EngineMode::kInject: return "inject";
    case EngineMode::kRag: return "rag";
    case EngineMode::kHybrid: return "hybrid";
  }
  return "";
}

std::optional<EngineMode> parse_engine_mode(std::string_view text) {
  std::string key(text);
  for (char& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (key == "inject" || key == "v0.1") return EngineMode::kInject;
  if (key == "rag" || key == "v1.0") return EngineMode::kRag;
  if (key == "hybrid" || key == "v2.0") return EngineMode::kHybrid;
  return std::nullopt;
}

std::size_t estimate_tokens_for_words(std::size_t words) { return (words * 13 + 9) / 10; }

std::size_t estimate_tokens(std::string_view text) { return estimate_tokens_for_words(count_words(text)); }

std::string render_entry(const MemoryEntry& entry) {
  return "[entry " + std::to_string(entry.entry_id) + "] " + std::string(to_string(entry.role)) + ": " +
         entry.content;
}

AssembledContext assemble_context(const AnchorSet& set, const std::vector<EvidenceUnit>& evidence,
                                  std::size_t budget_tokens) {
  if (budget_tokens == 0) throw Error(ErrorCode::kInvalidArgument, "token budget must be positive");

  struct IdentityRef {
    AnchorKind kind;
    const AnchorItem* item;
  };
  std::vector<IdentityRef> identity;
  std::vector<Unit> units;

  for (AnchorKind kind : kIdentityOrder) {
    const Anchor& anchor = set.at(kind);
    if (!anchor.enabled) continue;
    for (const auto& item : anchor.items) {
      Unit u;
      u.words = count_words(item.text);
      u.rank = kind == AnchorKind::kSalience ? salience_rank(item) : kRankIdentity;
      u.position = units.size();
      units.push_back(u);
      identity.push_back({kind, &item});
    }
  }
  const std::size_t identity_units = units.size();
  const bool memory_enabled = set.enabled(AnchorKind::kMemory);
  if (memory_enabled) {
    for (const auto& ev : evidence) {
      Unit u;
      u.words = count_words(ev.text);
      u.rank = kRankEvidence;
      u.position = units.size();
      units.push_back(u);
    }
  }

  std::size_t total_words = 0;
  for (const auto& u : units) total_words += u.words;

  AssembledContext ctx;
  if (estimate_tokens_for_words(total_words) > budget_tokens) {
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (units[a].rank != units[b].rank) return units[a].rank < units[b].rank;
      // Evidence goes oldest first; identity lines go from the back.
      return units[a].rank == kRankEvidence ? units[a].position < units[b].position
                                            : units[a].position > units[b].position;
    });
    for (std::size_t idx : order) {
      if (estimate_tokens_for_words(total_words) <= budget_tokens) break;
      units[idx].kept = false;
      total_words -= units[idx].words;
      ctx.truncated = true;
    }
  }
  ctx.token_estimate = estimate_tokens_for_words(total_words);

  std::optional<AnchorKind> current;
  for (std::size_t i = 0; i < identity_units; ++i) {
    if (!units[i].kept) continue;
    if (!ctx.identity_section.empty()) ctx.identity_section += current == identity[i].kind ? "\n" : "\n\n";
    ctx.identity_section += identity[i].item->text;
    current = identity[i].kind;
  }
  for (std::size_t i = identity_units; i < units.size(); ++i) {
    if (!units[i].kept) continue;
    const EvidenceUnit& ev = evidence[i - identity_units];
    if (!ctx.evidence_section.empty()) ctx.evidence_section += '\n';
    ctx.evidence_section += ev.text;
    ctx.provenance.insert(ctx.provenance.end(), ev.entry_ids.begin(), ev.entry_ids.end());
  }
  ctx.degraded = ctx.identity_section.empty();
  return ctx;
}

std::string build_prompt(const AssembledContext& context, std::string_view query) {
  std::string prompt = context.degraded ? std::string(kDegradedMarker) : context.identity_section;
  if (!context.evidence_section.empty()) {
    prompt += "\n\n# Relevant memory\n";
    prompt += context.evidence_section;
  }
  prompt += "\n\nUser: ";
  prompt += query;
  return prompt;
}

std::size_t rlm_call_count(std::size_t n, std::size_t chunk_size, std::size_t fanin) {
  if (n == 0) return 0;
  std::size_t level = (n + chunk_size - 1) / chunk_size;
  std::size_t total = level;
  while (level > 1) {
    level = (level + fanin - 1) / fanin;
    total += level;
  }
  return total;
}

void EngineOptions::validate() const {
  if (k < 1) throw Error(ErrorCode::kConfig, "k must be >= 1");
  if (chunk_size < 1) throw Error(ErrorCode::kConfig, "chunk_size must be >= 1");
  if (fanin < 2) throw Error(ErrorCode::kConfig, "fanin must be >= 2");
  if (budget_tokens < 1) throw Error(ErrorCode::kConfig, "budget_tokens must be >= 1");
  if (max_output_tokens < 1) throw Error(ErrorCode::kConfig, "max_output_tokens must be >= 1");
  if (leaf_parallelism < 1) throw Error(ErrorCode::kConfig, "leaf_parallelism must be >= 1");
}

// ---------------------------------------------------------------------------
// Agent

Agent::Agent(AnchorSet set, LlmBackend& backend)
    : set_(std::move(set)),
      index_(backend.embed_dim()),
      routes_(set_.directory.empty() ? RouteHistory() : RouteHistory(set_.directory / "ROUTES.jsonl")) {
  index_rebuild(index_, backend, set_.memory_log);
}

void Agent::catch_up_index(LlmBackend& backend) {
  if (index_.size() == set_.memory_log.size()) return;
  for (const auto& entry : set_.memory_log) {
    if (!index_.contains(entry.entry_id)) index_add(index_, backend, entry);
  }
}

// ---------------------------------------------------------------------------
// RetrievalEngine

RetrievalEngine::RetrievalEngine(LlmBackend& backend, EngineOptions options, RouterOptions router_options)
    : backend_(backend), options_(options), router_(backend, std::move(router_options)) {
  options_.validate();
}

AssembledContext RetrievalEngine::retrieve_inject(const AnchorSet& set) const {
  std::vector<EvidenceUnit> evidence;
  if (set.enabled(AnchorKind::kMemory)) {
    evidence.reserve(set.memory_log.size());
    for (const auto& entry : set.memory_log) evidence.push_back({render_entry(entry), {entry.entry_id}});
  }
  return assemble_context(set, evidence, options_.budget_tokens);
}

AssembledContext RetrievalEngine::retrieve_rag(const AnchorSet& set, const MemoryIndex& index,
                                               std::string_view query, std::size_t k) const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  std::vector<EvidenceUnit> evidence;
  std::vector<SearchHit> hits;
  if (set.enabled(AnchorKind::kMemory) && index.size() > 0) {
    Embedding q;
    try {
      q = backend_.embed(query);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kEmbeddingFailure) throw;
      throw Error(ErrorCode::kEmbeddingFailure, std::string("query embedding failed: ") + e.what());
    }
    hits = index.search(q, k);
    std::sort(hits.begin(), hits.end(),
              [](const SearchHit& a, const SearchHit& b) { return a.entry_id < b.entry_id; });
    for (const auto& hit : hits) {
      if (const MemoryEntry* entry = find_entry(set.memory_log, hit.entry_id)) {
        evidence.push_back({render_entry(*entry), {entry->entry_id}});
      }
    }
  }
  AssembledContext ctx = assemble_context(set, evidence, options_.budget_tokens);
  for (std::int64_t id : ctx.provenance) {
    auto it = std::find_if(hits.begin(), hits.end(), [id](const SearchHit& h) { return h.entry_id == id; });
    ctx.scores.push_back(it == hits.end() ? 0.0 : it->score);
  }
  return ctx;
}

AssembledContext RetrievalEngine::rlm_synthesize(const AnchorSet& set, std::string_view query,
                                                 std::size_t chunk_size, std::size_t fanin,
                                                 SynthesisTrace* trace) const {
  if (chunk_size < 1) throw Error(ErrorCode::kInvalidArgument, "chunk_size must be >= 1");
  if (fanin < 2) throw Error(ErrorCode::kInvalidArgument, "fanin must be >= 2");

  SynthesisTrace local;
  SynthesisTrace& t = trace ? *trace : local;
  t = {};
  const auto& log = set.memory_log;
  if (!set.enabled(AnchorKind::kMemory) || log.empty()) {
    return assemble_context(set, {}, options_.budget_tokens);
  }

  // Leaves: consecutive runs of chunk_size entries.
  const std::size_t leaf_count = (log.size() + chunk_size - 1) / chunk_size;
  std::vector<ChunkSummary> leaves(leaf_count);
  std::vector<std::string> leaf_text(leaf_count);
  for (std::size_t c = 0; c < leaf_count; ++c) {
    leaves[c].chunk_id = c;
    const std::size_t begin = c * chunk_size;
    const std::size_t end = std::min(log.size(), begin + chunk_size);
    for (std::size_t i = begin; i < end; ++i) {
      leaves[c].covered_entry_ids.push_back(log[i].entry_id);
      if (i > begin) leaf_text[c] += '\n';
      leaf_text[c] += render_entry(log[i]);
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t c = next++; c < leaf_count; c = next++) {
      try {
        leaves[c].summary_text = backend_.summarize(query, leaf_text[c]);
        ++calls;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = leaf_count;
      }
    }
  };
  const std::size_t workers = std::min(options_.leaf_parallelism, leaf_count);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  t.summarize_calls = calls;
  const auto rethrow_partial = [&](const std::exception_ptr& ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      throw PartialSynthesisError(std::string("RLM synthesis failed: ") + e.what(), t);
    }
  };
  if (failure) rethrow_partial(failure);
  t.levels.push_back(std::move(leaves));

  // Reduce until a single summary remains; each level is a barrier.
  int level = 0;
  while (t.levels.back().size() > 1) {
    const auto& below = t.levels.back();
    std::vector<ChunkSummary> above;
    ++level;
    for (std::size_t g = 0; g < below.size(); g += fanin) {
      ChunkSummary node;
      node.chunk_id = above.size();
      node.level = level;
      std::string joined;
      for (std::size_t i = g; i < std::min(below.size(), g + fanin); ++i) {
        if (i > g) joined += '\n';
        joined += below[i].summary_text;
        node.covered_entry_ids.insert(node.covered_entry_ids.end(), below[i].covered_entry_ids.begin(),
                                      below[i].covered_entry_ids.end());
      }
      try {
        node.summary_text = backend_.summarize(query, joined);
      } catch (const std::exception&) {
        rethrow_partial(std::current_exception());
      }
      ++t.summarize_calls;
      above.push_back(std::move(node));
    }
    t.levels.push_back(std::move(above));
  }

  const ChunkSummary& root = t.levels.back().front();
  AssembledContext ctx = assemble_context(set, {{root.summary_text, root.covered_entry_ids}}, options_.budget_tokens);
  ctx.chunk_count = leaf_count;
  return ctx;
}

Answer RetrievalEngine::respond(const Agent& agent, std::string_view query, EngineMode mode) const {
  if (query.empty()) throw Error(ErrorCode::kEmptyPrompt, "query must be non-empty");
  const auto t0 = std::chrono::steady_clock::now();
  Answer out;
  const AnchorSet& set = agent.anchors();
  switch (mode) {
    case EngineMode::kInject:
      out.context = retrieve_inject(set);
      break;
    case EngineMode::kRag:
      out.context = retrieve_rag(set, agent.index(), query, options_.k);
      break;
    case EngineMode::kHybrid: {
      out.decision = router_.route(query);
      const auto r0 = std::chrono::steady_clock::now();
      try {
        out.context = out.decision->route == Strategy::kRag
                          ? retrieve_rag(set, agent.index(), query, options_.k)
                          : rlm_synthesize(set, query, options_.chunk_size, options_.fanin);
      } catch (const Error& e) {
        if (out.decision->fallback && is_backend_error(e.code())) throw FallbackBackendError(e.code(), e.what());
        throw;
      }
      out.retrieval_latency = std::chrono::steady_clock::now() - r0;
      break;
    }
  }
  if (mode != EngineMode::kHybrid) out.retrieval_latency = std::chrono::steady_clock::now() - t0;
  try {
    out.response = backend_.generate(build_prompt(out.context, query), options_.max_output_tokens);
  } catch (const Error& e) {
    if (out.decision && out.decision->fallback && is_backend_error(e.code())) {
      throw FallbackBackendError(e.code(), e.what());
    }
    throw;
  }
  out.total_latency = std::chrono::steady_clock::now() - t0;
  return out;
}

Answer RetrievalEngine::answer(Agent& agent, std::string_view query, EngineMode mode,
                               const std::string& session_id) const {
  if (query.empty()) throw Error(ErrorCode::kEmptyPrompt, "query must be non-empty");
  AnchorSet& set = agent.anchors();

  Answer out;
  try {
    agent.catch_up_index(backend_);
    out = respond(agent, query, mode);
  } catch (const Error& e) {
    if (is_backend_error(e.code())) {
      const MemoryEntry user = append_memory(set, Role::kUser, std::string(query), session_id);
      try {
        index_add(agent.index(), backend_, user);
      } catch (const Error&) {
        // picked up by catch_up_index on the next turn
      }
    }
    throw;
  }

  const MemoryEntry user = append_memory(set, Role::kUser, std::string(query), session_id);
  const MemoryEntry reply = append_memory(set, Role::kAgent, out.response, session_id);
  for (const MemoryEntry* entry : {&user, &reply}) {
    try {
      index_add(agent.index(), backend_, *entry);
    } catch (const Error& e) {
      std::cerr << "[engine] indexing entry " << entry->entry_id << " deferred: " << e.what() << '\n';
    }
  }

  if (out.decision) {
    RouteRecord record;
    record.timestamp = format_timestamp(user.timestamp);
    record.query_hash = query_hash(query);
    if (options_.store_query_text) record.query_text = std::string(query);
    record.route = std::string(to_string(out.decision->route));
    record.p_exhaustive = out.decision->p_exhaustive;
    record.threshold = out.decision->threshold_used;
    record.router_latency_s = out.decision->router_latency.count();
    record.retrieval_latency_s = out.retrieval_latency.count();
    record.total_latency_s = out.total_latency.count();
    record.fallback = out.decision->fallback;
    agent.routes().append(record);
  }
  return out;
}

}  // namespace anchormem
