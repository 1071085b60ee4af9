#include "anchormem/resilience_lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "anchormem/error.hpp"

namespace anchormem {

namespace {

constexpr const char* kTopics[] = {"the API",        "the database schema", "deployment", "the budget",
                                   "onboarding",     "the testing strategy", "the logo",   "pricing",
                                   "the data model", "the release plan",     "hiring",     "the roadmap"};
constexpr const char* kAttributes[] = {"name", "favorite editor", "time zone", "preferred language", "role"};
constexpr const char* kEvents[] = {"demo", "launch review", "standup", "design review", "retro"};
constexpr const char* kThings[] = {"framework", "database", "color scheme", "vendor", "cloud region"};

constexpr const char* kFocusedTemplates[] = {
    "What did we decide about {topic}?",
    "What is my {attr}?",
    "When is the {event} scheduled?",
    "Which {thing} did I pick for {topic}?",
    "Remind me what you said about {topic}.",
    "What was the name of the {thing} we chose?",
};
constexpr const char* kExhaustiveTemplates[] = {
    "Summarize everything we've discussed about {topic}.",
    "What patterns do you notice across our conversations?",
    "Give me an overall view of {topic} so far.",
    "What have we covered across our sessions on {topic}?",
    "Review all of our {thing} decisions.",
};

template <std::size_t N>
const char* pick(SplitMix& rng, const char* const (&options)[N]) {
  return options[rng.below(N)];
}

std::string fill(std::string text, std::string_view slot, std::string_view value) {
  for (std::size_t pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + value.size())) {
    text.replace(pos, slot.size(), value);
  }
  return text;
}

double truncated_normal(SplitMix& rng, double mu, double sigma) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double x = mu + sigma * rng.normal();
    if (x >= 0.0 && x <= 1.0) return x;
  }
  return std::clamp(mu, 0.0, 1.0);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------------------
// workload

void WorkloadSpec::validate() const {
  const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(alpha) || !unit(mu1) || !unit(mu2) || !unit(label_boundary)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha, mu1, mu2 and label_boundary must lie in [0, 1]");
  }
  if (!(mu1 < mu2)) throw Error(ErrorCode::kInvalidArgument, "workload requires mu1 < mu2");
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigmas must be positive");
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "workload count must be positive");
}

std::string_view to_string(ScopeLabel label) { return label == ScopeLabel::kFocused ? "focused" : "exhaustive"; }

std::vector<SyntheticQuery> generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  SplitMix rng(spec.seed);
  std::vector<SyntheticQuery> queries;
  queries.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SyntheticQuery q;
    const bool first_mode = rng.uniform() < spec.alpha;
    q.true_scope = first_mode ? truncated_normal(rng, spec.mu1, spec.sigma1) : truncated_normal(rng, spec.mu2, spec.sigma2);
    q.true_label = q.true_scope >= spec.label_boundary ? ScopeLabel::kExhaustive : ScopeLabel::kFocused;
    std::string text = q.true_label == ScopeLabel::kFocused ? pick(rng, kFocusedTemplates) : pick(rng, kExhaustiveTemplates);
    text = fill(std::move(text), "{topic}", pick(rng, kTopics));
    text = fill(std::move(text), "{attr}", pick(rng, kAttributes));
    text = fill(std::move(text), "{event}", pick(rng, kEvents));
    text = fill(std::move(text), "{thing}", pick(rng, kThings));
    q.text = std::move(text);
    queries.push_back(std::move(q));
  }
  return queries;
}

double binary_entropy_bits(double p) {
  const auto term = [](double x) { return x > 0.0 ? -x * std::log2(x) : 0.0; };
  return term(p) + term(1.0 - p);
}

RouterEvaluation evaluate_router(const std::vector<SyntheticQuery>& queries, double router_threshold,
                                 LlmBackend& classifier) {
  if (queries.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot evaluate a router on no queries");
  std::size_t correct = 0, rag = 0, focused = 0;
  for (const auto& q : queries) {
    const Strategy route = route_for(std::clamp(classifier.classify_exhaustive(q.text), 0.0, 1.0), router_threshold);
    const bool is_focused = q.true_label == ScopeLabel::kFocused;
    focused += is_focused;
    rag += route == Strategy::kRag;
    correct += (route == Strategy::kRag) == is_focused;
  }
  RouterEvaluation e;
  const auto n = static_cast<double>(queries.size());
  e.queries = queries.size();
  e.accuracy = static_cast<double>(correct) / n;
  e.rag_fraction = static_cast<double>(rag) / n;
  e.label_entropy_bits = binary_entropy_bits(static_cast<double>(focused) / n);
  e.entropy_bound = 1.0 - e.label_entropy_bits;
  e.conjecture_consistent = e.accuracy >= e.entropy_bound;
  return e;
}

// ---------------------------------------------------------------------------
// synthetic failure

void FailureScenario::validate() const {
  if (weights.empty()) throw Error(ErrorCode::kInvalidArgument, "scenario needs at least one anchor");
  if (deltas.size() != weights.size()) throw Error(ErrorCode::kInvalidArgument, "deltas and weights differ in length");
  if (failed_index >= weights.size()) throw Error(ErrorCode::kInvalidArgument, "failed index out of range");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw Error(ErrorCode::kInvalidArgument, "weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "weights must sum to 1");
  for (double d : deltas) {
    if (d < 0.0) throw Error(ErrorCode::kInvalidArgument, "deltas must be non-negative");
  }
}

ContributionModel ContributionModel::healthy_except(std::size_t n, std::size_t failed) {
  ContributionModel m;
  m.phi.assign(n, 1.0);
  if (failed < n) m.phi[failed] = 0.0;
  return m;
}

FailureOutcome simulate_failure(const FailureScenario& scenario, const ContributionModel& model) {
  scenario.validate();
  if (model.phi.size() != scenario.weights.size()) {
    throw Error(ErrorCode::kInvalidArgument, "contribution model size does not match the scenario");
  }
  const std::size_t j = scenario.failed_index;
  double residual = 0.0, delta_sum = 0.0;
  for (std::size_t i = 0; i < scenario.weights.size(); ++i) {
    if (i == j) continue;
    residual += scenario.weights[i] * std::max(model.phi[i] - scenario.deltas[i], 0.0);
    delta_sum += scenario.deltas[i];
  }
  if (model.f == Normalization::kClamp) residual = std::clamp(residual, 0.0, 1.0);
  FailureOutcome out;
  out.residual = residual;
  out.bound = 1.0 - scenario.weights[j] - delta_sum;
  out.holds = out.residual >= out.bound - 1e-9;
  return out;
}

FailureScenario random_failure_scenario(SplitMix& rng, std::size_t anchors, double max_delta) {
  if (anchors < 1) throw Error(ErrorCode::kInvalidArgument, "scenario needs at least one anchor");
  FailureScenario s;
  double sum = 0.0;
  for (std::size_t i = 0; i < anchors; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    s.weights.push_back(-std::log(u));
    sum += s.weights.back();
  }
  for (double& w : s.weights) w /= sum;
  // Absorb the rounding residue so the weights sum to 1 as closely as doubles allow.
  s.weights.back() = std::max(0.0, 1.0 - std::accumulate(s.weights.begin(), s.weights.end() - 1, 0.0));
  for (std::size_t i = 0; i < anchors; ++i) s.deltas.push_back(max_delta * rng.uniform());
  s.failed_index = rng.below(anchors);
  s.deltas[s.failed_index] = 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// measured failure

double measured_failure(Agent& agent, AnchorKind failed_kind, const ProbeSet& probes, const DriftMonitor& monitor,
                        EngineMode mode, const IdentityHash* baseline) {
  IdentityHash reference;
  if (baseline) {
    reference = *baseline;
  } else {
    reference = monitor.make_baseline(agent, probes, mode).hash;
  }

  Anchor& anchor = agent.anchors().at(failed_kind);
  struct Restore {
    Anchor& anchor;
    bool previous;
    ~Restore() { anchor.enabled = previous; }
  } restore{anchor, anchor.enabled};
  anchor.enabled = false;

  const auto responses = monitor.run_probes(agent, probes, mode);
  const IdentityHash after = compute_identity_hash(monitor.backend(), responses, probes.version, reference.seed);
  return 1.0 - static_cast<double>(hamming_distance(reference, after)) / static_cast<double>(kIdentityHashBits);
}

// ---------------------------------------------------------------------------
// consistency cost

std::size_t consistency_check(const std::vector<Eigen::MatrixXd>& anchors) {
  std::size_t contradictions = 0;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t b = a + 1; b < anchors.size(); ++b) {
      const Eigen::MatrixXd cosines = anchors[a].transpose() * anchors[b];
      contradictions += static_cast<std::size_t>((cosines.array() < -0.5).count());
    }
  }
  return contradictions;
}

std::vector<Eigen::MatrixXd> synthetic_anchor_embeddings(LlmBackend& backend, std::size_t count,
                                                         std::size_t items_per_anchor, std::uint64_t seed) {
  static constexpr const char* kWords[] = {"always", "never", "prefer", "avoid", "concise", "verbose", "direct",
                                           "gentle", "honest", "careful", "quick", "thorough", "formal", "casual",
                                           "bullet", "prose", "cite", "guess", "ask", "assume"};
  SplitMix rng(seed);
  std::vector<Eigen::MatrixXd> anchors;
  anchors.reserve(count);
  for (std::size_t a = 0; a < count; ++a) {
    Eigen::MatrixXd m(backend.embed_dim(), static_cast<Eigen::Index>(items_per_anchor));
    for (std::size_t i = 0; i < items_per_anchor; ++i) {
      std::string text = "anchor" + std::to_string(a) + " item" + std::to_string(i);
      for (int w = 0; w < 4; ++w) text += std::string(" ") + kWords[rng.below(std::size(kWords))];
      m.col(static_cast<Eigen::Index>(i)) = backend.embed(text);
    }
    anchors.push_back(std::move(m));
  }
  return anchors;
}

ConsistencyMeasurement measure_consistency_cost(std::size_t k, std::size_t repetitions,
                                                const ConsistencyBenchOptions& options) {
  if (k < 1 || k > 64) throw Error(ErrorCode::kInvalidArgument, "k must lie in [1, 64]");
  if (repetitions < 1) throw Error(ErrorCode::kInvalidArgument, "repetitions must be >= 1");
  MockBackend backend(MockBackend::Options{options.seed, options.embed_dim, {}});
  const auto anchors = synthetic_anchor_embeddings(backend, k, options.items_per_anchor, options.seed);

  ConsistencyMeasurement m;
  m.k = k;
  m.anchor_pairs = k * (k - 1) / 2;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    m.contradictions = consistency_check(anchors);
    m.timings_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  m.median_s = median(m.timings_s);
  return m;
}

double polynomial_fit_r2(const std::vector<double>& x, const std::vector<double>& y, int degree) {
  if (x.size() != y.size() || x.empty()) throw Error(ErrorCode::kInvalidArgument, "fit needs paired samples");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd design(n, degree + 1);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int p = 0; p <= degree; ++p) design(i, p) = std::pow(x[static_cast<std::size_t>(i)], p);
    target[i] = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
  const double ss_res = (design * coef - target).squaredNorm();
  const double ss_tot = (target.array() - target.mean()).matrix().squaredNorm();
  return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

ScalingReport consistency_scaling(const std::vector<std::size_t>& ks, std::size_t repetitions,
                                  const ConsistencyBenchOptions& options) {
  ScalingReport report;
  std::vector<double> x, y;
  for (std::size_t k : ks) {
    report.points.push_back(measure_consistency_cost(k, repetitions, options));
    x.push_back(static_cast<double>(k));
    y.push_back(report.points.back().median_s);
  }
  report.monotone = std::is_sorted(y.begin(), y.end());
  if (x.size() >= 2) report.linear_r2 = polynomial_fit_r2(x, y, 1);
  if (x.size() >= 3) report.quadratic_r2 = polynomial_fit_r2(x, y, 2);
  report.best_model = report.quadratic_r2 > report.linear_r2 ? "quadratic" : "linear";
  return report;
}

// ---------------------------------------------------------------------------
// reports

SimulationSummary run_simulation(const SimulationOptions& options, LlmBackend& classifier, std::ostream* jsonl,
                                 std::ostream* summary) {
  SimulationSummary s;
  const auto queries = generate_workload(options.workload);
  s.routing = evaluate_router(queries, 0.5, classifier);
  if (jsonl) {
    *jsonl << nlohmann::json{{"kind", "routing"},
                             {"queries", s.routing.queries},
                             {"alpha", options.workload.alpha},
                             {"rag_fraction", s.routing.rag_fraction},
                             {"accuracy", s.routing.accuracy},
                             {"label_entropy_bits", s.routing.label_entropy_bits},
                             {"entropy_bound", s.routing.entropy_bound},
                             {"conjecture_consistent", s.routing.conjecture_consistent}}
                  .dump()
           << '\n';
  }

  SplitMix rng(options.seed);
  s.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < options.scenarios; ++i) {
    const std::size_t n = 1 + rng.below(std::max<std::size_t>(1, options.max_anchors));
    const FailureScenario scenario = random_failure_scenario(rng, n, options.max_delta);
    const FailureOutcome outcome =
        simulate_failure(scenario, ContributionModel::healthy_except(n, scenario.failed_index));
    ++s.scenarios;
    s.bound_holds += outcome.holds;
    s.min_slack = std::min(s.min_slack, outcome.residual - outcome.bound);
    if (jsonl) {
      *jsonl << nlohmann::json{{"kind", "failure"},
                               {"scenario", i},
                               {"anchors", n},
                               {"failed_index", scenario.failed_index},
                               {"weights", scenario.weights},
                               {"deltas", scenario.deltas},
                               {"residual", outcome.residual},
                               {"bound", outcome.bound},
                               {"holds", outcome.holds}}
                    .dump()
             << '\n';
    }
  }
  if (s.scenarios == 0) s.min_slack = 0.0;

  if (summary) {
    auto& out = *summary;
    out << std::fixed << std::setprecision(4);
    out << "routing workload      queries=" << s.routing.queries << "  alpha=" << options.workload.alpha << '\n';
    out << "  routed to RAG       " << s.routing.rag_fraction << '\n';
    out << "  router accuracy     " << s.routing.accuracy << '\n';
    out << "  entropy bound       " << s.routing.entropy_bound << "  (label entropy " << s.routing.label_entropy_bits
        << " bits; conjecture " << (s.routing.conjecture_consistent ? "consistent" : "not met") << ")\n";
    out << "failure scenarios     " << s.scenarios << '\n';
    out << "  bound holds         " << s.bound_holds << " / " << s.scenarios << '\n';
    out << "  min residual-bound  " << s.min_slack << '\n';
  }
  return s;
}

void write_scaling_report(const ScalingReport& report, std::ostream* jsonl, std::ostream* summary) {
  if (jsonl) {
    for (const auto& p : report.points) {
      *jsonl << nlohmann::json{{"kind", "consistency_cost"},
                               {"k", p.k},
                               {"anchor_pairs", p.anchor_pairs},
                               {"median_s", p.median_s},
                               {"timings_s", p.timings_s},
                               {"contradictions", p.contradictions}}
                    .dump()
             << '\n';
    }
    *jsonl << nlohmann::json{{"kind", "consistency_fit"},
                             {"linear_r2", report.linear_r2},
                             {"quadratic_r2", report.quadratic_r2},
                             {"best_model", report.best_model},
                             {"monotone", report.monotone}}
                  .dump()
           << '\n';
  }
  if (summary) {
    auto& out = *summary;
    out << "   k   pairs      median_s  contradictions\n";
    for (const auto& p : report.points) {
      out << std::setw(4) << p.k << std::setw(8) << p.anchor_pairs << "  " << std::scientific << std::setprecision(3)
          << std::setw(12) << p.median_s << std::defaultfloat << std::setw(16) << p.contradictions << '\n';
    }
    out << std::fixed << std::setprecision(4) << "linear fit r2     " << report.linear_r2 << '\n'
        << "quadratic fit r2  " << report.quadratic_r2 << '\n'
        << "best model        " << report.best_model << '\n'
        << "monotone in k     " << (report.monotone ? "yes" : "no") << '\n';
  }
}

}  // namespace anchormem
