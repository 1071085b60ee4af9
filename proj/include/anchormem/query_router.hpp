#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anchormem/backend.hpp"

namespace anchormem {

using Seconds = std::chrono::duration<double>;

/// Weights and latencies of the retrieval cost C(s, q) = l1 * T(s) + l2 * (1 - A(s, q)).
struct CostParams {
  double latency_weight = 0.05;   // lambda1
  double accuracy_weight = 1.0;   // lambda2
  Seconds rag_latency{0.4};
  Seconds rlm_latency{8.0};

  /// Throws kInvalidParams unless lambda2 > 0, lambda1 >= 0 and T_RLM >= T_RAG >= 0.
  void validate() const;
};

enum class Strategy { kRag, kRlm };
std::string_view to_string(Strategy strategy);
std::optional<Strategy> parse_strategy(std::string_view text);

/// Routing threshold sigma* = clamp(lambda1 (T_RLM - T_RAG) / lambda2, 0, 1).
/// A clamped value of 1.0 means every query with p < 1 goes to RAG.
double decision_boundary(const CostParams& params);

/// lambda1 * T(strategy) + lambda2 * (1 - accuracy).
double expected_cost(Strategy strategy, double accuracy, const CostParams& params);

struct RouteDecision {
  Strategy route = Strategy::kRag;
  double p_exhaustive = 0.0;
  Seconds router_latency{0.0};
  double threshold_used = 0.5;
  /// Set when the classifier failed and the query fell back to RAG.
  bool fallback = false;
};

/// One persisted record of a routing decision. The query itself is stored
/// only as a hash unless plaintext storage was requested.
struct RouteRecord {
  std::string timestamp;
  std::string query_hash;
  std::string query_text;  // empty unless plaintext storage is on
  std::string route;
  double p_exhaustive = 0.0;
  double threshold = 0.5;
  double router_latency_s = 0.0;
  double retrieval_latency_s = 0.0;
  double total_latency_s = 0.0;
  bool fallback = false;
};

/// Append-only route history, mirrored to a JSON-lines file when a path is set.
class RouteHistory {
 public:
  RouteHistory() = default;
  explicit RouteHistory(std::filesystem::path file);

  void append(const RouteRecord& record);
  /// Newest first; limit 0 means all.
  std::vector<RouteRecord> recent(std::size_t limit) const;
  std::size_t size() const;

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::vector<RouteRecord> records_;
};

enum class ThresholdSource { kFixedHalf, kDerivedBoundary };

struct RouterOptions {
  ThresholdSource threshold_source = ThresholdSource::kFixedHalf;
  CostParams cost;
  /// Reported instead of the measured classifier latency (router-cost experiments).
  std::optional<Seconds> synthetic_latency;
};

/// Wraps the backend classifier: p >= threshold routes to RLM, p < threshold to RAG.
class QueryRouter {
 public:
  QueryRouter(LlmBackend& backend, RouterOptions options);

  double threshold() const;
  /// Throws kEmptyPrompt on an empty query; any other classifier failure
  /// yields a RAG fallback decision with p = 0.
  RouteDecision route(std::string_view query) const;

  const RouterOptions& options() const { return options_; }

 private:
  LlmBackend& backend_;
  RouterOptions options_;
};

/// Route for a given probability and threshold (tie goes to RLM).
inline Strategy route_for(double p_exhaustive, double threshold) {
  return p_exhaustive < threshold ? Strategy::kRag : Strategy::kRlm;
}

/// 64-bit FNV-1a of the query, hex encoded.
std::string query_hash(std::string_view query);

}  // namespace anchormem
