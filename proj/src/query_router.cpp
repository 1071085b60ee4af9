#include "anchormem/query_router.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "anchormem/anchor_store.hpp"
#include "anchormem/error.hpp"
#include "anchormem/hashing.hpp"

namespace anchormem {

using nlohmann::json;

void CostParams::validate() const {
  const auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(latency_weight) || !finite(accuracy_weight) || !finite(rag_latency.count()) ||
      !finite(rlm_latency.count())) {
    throw Error(ErrorCode::kInvalidParams, "cost parameters must be finite");
  }
  if (!(accuracy_weight > 0.0)) throw Error(ErrorCode::kInvalidParams, "accuracy weight (lambda2) must be > 0");
  if (latency_weight < 0.0) throw Error(ErrorCode::kInvalidParams, "latency weight (lambda1) must be >= 0");
  if (rag_latency.count() < 0.0 || rlm_latency < rag_latency) {
    throw Error(ErrorCode::kInvalidParams, "latencies must satisfy T_RLM >= T_RAG >= 0");
  }
}

std::string_view to_string(Strategy strategy) { return strategy == Strategy::kRag ? "RAG" : "RLM"; }

std::optional<Strategy> parse_strategy(std::string_view text) {
  if (text == "RAG") return Strategy::kRag;
  if (text == "RLM") return Strategy::kRlm;
  return std::nullopt;
}

double decision_boundary(const CostParams& params) {
  params.validate();
  const double raw =
      params.latency_weight * (params.rlm_latency - params.rag_latency).count() / params.accuracy_weight;
  return std::clamp(raw, 0.0, 1.0);
}

double expected_cost(Strategy strategy, double accuracy, const CostParams& params) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "accuracy must lie in [0, 1]");
  }
  const Seconds t = strategy == Strategy::kRag ? params.rag_latency : params.rlm_latency;
  return params.latency_weight * t.count() + params.accuracy_weight * (1.0 - accuracy);
}

std::string query_hash(std::string_view query) { return hex64(fnv1a64(query)); }

// ---------------------------------------------------------------------------

namespace {

json to_json(const RouteRecord& r) {
  json j = {{"timestamp", r.timestamp},
            {"query_hash", r.query_hash},
            {"route", r.route},
            {"p_exhaustive", r.p_exhaustive},
            {"threshold", r.threshold},
            {"router_latency_s", r.router_latency_s},
            {"retrieval_latency_s", r.retrieval_latency_s},
            {"total_latency_s", r.total_latency_s},
            {"fallback", r.fallback}};
  if (!r.query_text.empty()) j["query_text"] = r.query_text;
  return j;
}

RouteRecord from_json(const json& j) {
  RouteRecord r;
  r.timestamp = j.value("timestamp", "");
  r.query_hash = j.value("query_hash", "");
  r.query_text = j.value("query_text", "");
  r.route = j.value("route", "RAG");
  r.p_exhaustive = j.value("p_exhaustive", 0.0);
  r.threshold = j.value("threshold", 0.5);
  r.router_latency_s = j.value("router_latency_s", 0.0);
  r.retrieval_latency_s = j.value("retrieval_latency_s", 0.0);
  r.total_latency_s = j.value("total_latency_s", 0.0);
  r.fallback = j.value("fallback", false);
  return r;
}

}  // namespace

RouteHistory::RouteHistory(std::filesystem::path file) : file_(std::move(file)) {
  if (!std::filesystem::exists(file_)) return;
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records_.push_back(from_json(json::parse(line)));
    } catch (const json::exception&) {
      // A torn final line from a crash mid-append is skipped.
    }
  }
}

void RouteHistory::append(const RouteRecord& record) {
  std::lock_guard lock(mutex_);
  if (!file_.empty()) {
    std::ofstream out(file_, std::ios::app);
    out << to_json(record).dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::kStorageWriteFailure, "cannot append to " + file_.string());
  }
  records_.push_back(record);
}

std::vector<RouteRecord> RouteHistory::recent(std::size_t limit) const {
  std::lock_guard lock(mutex_);
  const std::size_t n = limit == 0 ? records_.size() : std::min(limit, records_.size());
  return {records_.rbegin(), records_.rbegin() + static_cast<std::ptrdiff_t>(n)};
}

std::size_t RouteHistory::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

// ---------------------------------------------------------------------------

QueryRouter::QueryRouter(LlmBackend& backend, RouterOptions options)
    : backend_(backend), options_(std::move(options)) {
  options_.cost.validate();
}

double QueryRouter::threshold() const {
  return options_.threshold_source == ThresholdSource::kFixedHalf ? 0.5 : decision_boundary(options_.cost);
}

RouteDecision QueryRouter::route(std::string_view query) const {
  if (query.empty()) throw Error(ErrorCode::kEmptyPrompt, "query must be non-empty");
  RouteDecision decision;
  decision.threshold_used = threshold();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    decision.p_exhaustive = std::clamp(backend_.classify_exhaustive(query), 0.0, 1.0);
  } catch (const Error& e) {
    std::cerr << "[router] classifier failed (" << e.what() << "); falling back to RAG\n";
    decision.p_exhaustive = 0.0;
    decision.fallback = true;
  }
  decision.router_latency = options_.synthetic_latency.value_or(std::chrono::steady_clock::now() - t0);
  decision.route = decision.fallback ? Strategy::kRag : route_for(decision.p_exhaustive, decision.threshold_used);
  return decision;
}

}  // namespace anchormem
