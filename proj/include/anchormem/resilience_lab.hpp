#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/drift_monitor.hpp"
#include "anchormem/hashing.hpp"
#include "anchormem/retrieval_engine.hpp"

namespace anchormem {

// --- workload ---------------------------------------------------------------

/// Bimodal query-scope mixture alpha * N(mu1, sigma1^2) + (1 - alpha) * N(mu2, sigma2^2),
/// truncated to [0, 1].
struct WorkloadSpec {
  double alpha = 0.9;
  double mu1 = 0.01;
  double mu2 = 0.8;
  double sigma1 = 0.02;
  double sigma2 = 0.1;
  std::size_t count = 10000;
  std::uint64_t seed = 42;
  /// Scope at or above this is labelled exhaustive.
  double label_boundary = 0.4;

  void validate() const;
};

enum class ScopeLabel { kFocused, kExhaustive };
std::string_view to_string(ScopeLabel label);

struct SyntheticQuery {
  std::string text;
  double true_scope = 0.0;
  ScopeLabel true_label = ScopeLabel::kFocused;
};

/// Deterministic given the seed. Query text comes from label-specific
/// templates: exhaustive ones carry corpus-wide phrasing ("summarize
/// everything", "patterns ... across our"), focused ones never do.
std::vector<SyntheticQuery> generate_workload(const WorkloadSpec& spec);

struct RouterEvaluation {
  std::size_t queries = 0;
  double accuracy = 0.0;
  double rag_fraction = 0.0;
  double label_entropy_bits = 0.0;
  /// 1 - H(label)/log 2, i.e. 1 - H in bits.
  double entropy_bound = 0.0;
  /// accuracy >= entropy_bound; reported, never enforced.
  bool conjecture_consistent = false;
};

/// Routes every query through `classifier` at `router_threshold` and scores
/// RAG against focused labels and RLM against exhaustive ones.
RouterEvaluation evaluate_router(const std::vector<SyntheticQuery>& queries, double router_threshold,
                                 LlmBackend& classifier);

/// Binary entropy in bits.
double binary_entropy_bits(double p);

// --- synthetic failure ------------------------------------------------------

struct FailureScenario {
  std::vector<double> weights;   // sum to 1
  std::size_t failed_index = 0;
  std::vector<double> deltas;    // degradation of surviving anchors; deltas[failed_index] ignored

  void validate() const;
};

enum class Normalization { kIdentity, kClamp };

struct ContributionModel {
  std::vector<double> phi;
  Normalization f = Normalization::kIdentity;

  /// phi = 1 for every anchor except the failed one.
  static ContributionModel healthy_except(std::size_t n, std::size_t failed);
};

struct FailureOutcome {
  double residual = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// residual = f(sum_{i != j} w_i * max(phi_i - delta_i, 0)),
/// bound = 1 - w_j - sum_{i != j} delta_i, holds = residual >= bound - 1e-9.
FailureOutcome simulate_failure(const FailureScenario& scenario, const ContributionModel& model);

/// Weights uniform on the simplex, deltas uniform in [0, max_delta].
FailureScenario random_failure_scenario(SplitMix& rng, std::size_t anchors, double max_delta = 0.2);

// --- measured failure -------------------------------------------------------

/// Disables `failed_kind`, reruns the probes and returns
/// 1 - hamming(baseline, post_failure) / 256. The anchor's previous enabled
/// state is restored even when probing throws. Without a baseline one is
/// taken from the current state first.
double measured_failure(Agent& agent, AnchorKind failed_kind, const ProbeSet& probes,
                        const DriftMonitor& monitor, EngineMode mode, const IdentityHash* baseline = nullptr);

// --- consistency cost -------------------------------------------------------

/// Pairwise cross-anchor contradiction scan: every item of every anchor pair
/// is compared and cosine < -0.5 counts as a contradiction. Each matrix
/// holds one anchor's unit item embeddings as columns.
std::size_t consistency_check(const std::vector<Eigen::MatrixXd>& anchors);

/// `count` synthetic anchors of `items_per_anchor` items each, embedded with `backend`.
std::vector<Eigen::MatrixXd> synthetic_anchor_embeddings(LlmBackend& backend, std::size_t count,
                                                         std::size_t items_per_anchor, std::uint64_t seed);

struct ConsistencyMeasurement {
  std::size_t k = 0;
  std::size_t anchor_pairs = 0;
  std::vector<double> timings_s;
  double median_s = 0.0;
  std::size_t contradictions = 0;
};

struct ScalingReport {
  std::vector<ConsistencyMeasurement> points;
  double linear_r2 = 0.0;
  double quadratic_r2 = 0.0;
  std::string best_model;
  bool monotone = false;
};

struct ConsistencyBenchOptions {
  std::size_t items_per_anchor = 64;
  int embed_dim = 256;
  std::uint64_t seed = 7;
};

/// Times consistency_check over k synthetic anchors. Requires 1 <= k <= 64 and repetitions >= 1.
ConsistencyMeasurement measure_consistency_cost(std::size_t k, std::size_t repetitions,
                                                const ConsistencyBenchOptions& options = {});

/// r^2 of the least-squares polynomial fit of y on x of the given degree.
double polynomial_fit_r2(const std::vector<double>& x, const std::vector<double>& y, int degree);

ScalingReport consistency_scaling(const std::vector<std::size_t>& ks, std::size_t repetitions,
                                  const ConsistencyBenchOptions& options = {});

// --- reports ----------------------------------------------------------------

struct SimulationOptions {
  WorkloadSpec workload;
  std::size_t scenarios = 10000;
  std::size_t max_anchors = 8;
  double max_delta = 0.2;
  std::uint64_t seed = 1234;
};

struct SimulationSummary {
  RouterEvaluation routing;
  std::size_t scenarios = 0;
  std::size_t bound_holds = 0;
  double min_slack = 0.0;  // min(residual - bound)
};

/// Runs the routing evaluation and the failure scenarios; one JSON object per
/// scenario goes to `jsonl` (nullable) and a table to `summary` (nullable).
SimulationSummary run_simulation(const SimulationOptions& options, LlmBackend& classifier, std::ostream* jsonl,
                                 std::ostream* summary);

/// One JSON object per k plus one for the fits to `jsonl`, and a table to `summary`.
void write_scaling_report(const ScalingReport& report, std::ostream* jsonl, std::ostream* summary);

}  // namespace anchormem
