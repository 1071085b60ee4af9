#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "anchormem/backend.hpp"
#include "anchormem/drift_monitor.hpp"
#include "anchormem/error.hpp"
#include "anchormem/hashing.hpp"
#include "test_support.hpp"

using namespace anchormem;
using anchormem::testing::TempDir;

namespace {

std::vector<std::string> vocabulary_responses(const std::string& stem, std::size_t count, std::size_t words) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string r;
    for (std::size_t w = 0; w < words; ++w) r += stem + std::to_string(i * words + w) + " ";
    out.push_back(r);
  }
  return out;
}

// Direct two-point KL summation in nats.
double kl_two_point(double p0, double q0) {
  return p0 * std::log(p0 / q0) + (1 - p0) * std::log((1 - p0) / (1 - q0));
}

std::unique_ptr<Agent> soul_agent(LlmBackend& backend, const std::string& soul,
                                  const std::filesystem::path& dir = {}) {
  AnchorSet set = make_anchor_set("a", dir);
  set.at(AnchorKind::kSoul).raw_text = soul;
  set.at(AnchorKind::kSoul).items = parse_anchor(AnchorKind::kSoul, soul);
  if (!dir.empty()) save_anchor_set(set);
  return std::make_unique<Agent>(std::move(set), backend);
}

}  // namespace

TEST(ProbeSet, StandardSetIsValid) {
  const ProbeSet p = ProbeSet::standard();
  EXPECT_EQ(p.probes.size(), 24u);
  EXPECT_NO_THROW(p.validate());
  MockBackend mock;
  for (const auto& probe : p.probes) EXPECT_EQ(mock.classify_exhaustive(probe), 0.0) << probe;
}

TEST(ProbeSet, TooFewProbesRejected) {
  ProbeSet p{{"a", "b"}, "v"};
  EXPECT_THROW(p.validate(), Error);
}

TEST(IdentityHash, HexRoundTrip) {
  IdentityHash h;
  h.bits.set(0);
  h.bits.set(255);
  h.bits.set(100);
  const std::string hex = h.hex();
  EXPECT_EQ(hex.size(), 64u);
  EXPECT_EQ(IdentityHash::bits_from_hex(hex), h.bits);
}

TEST(IdentityHash, IdenticalResponsesIdenticalHash) {
  MockBackend mock;
  const auto r = vocabulary_responses("w", 16, 5);
  const IdentityHash a = compute_identity_hash(mock, r, "v1");
  const IdentityHash b = compute_identity_hash(mock, r, "v1");
  EXPECT_EQ(a.bits, b.bits);
  EXPECT_EQ(hamming_distance(a, b), 0u);
}

TEST(IdentityHash, VersionMismatchRejected) {
  MockBackend mock;
  const auto r = vocabulary_responses("w", 16, 5);
  try {
    hamming_distance(compute_identity_hash(mock, r, "v1"), compute_identity_hash(mock, r, "v2"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProbeSetVersionMismatch);
  }
}

// Monte Carlo over 1,000 projection seeds: disjoint vocabularies give nearly
// orthogonal mean embeddings, so about half the sign bits should differ.
TEST(IdentityHash, DisjointResponsesFarApartAndSingleFlipCloser) {
  MockBackend mock;
  const auto base = vocabulary_responses("alpha", 16, 6);
  const auto other = vocabulary_responses("omega", 16, 6);
  auto one_flip = base;
  one_flip[5] = other[5];

  int far = 0;
  int closer = 0;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    const IdentityHash h0 = compute_identity_hash(mock, base, "v", seed);
    const std::size_t all_diff = hamming_distance(h0, compute_identity_hash(mock, other, "v", seed));
    const std::size_t single = hamming_distance(h0, compute_identity_hash(mock, one_flip, "v", seed));
    if (all_diff > 64) ++far;
    if (single < all_diff) ++closer;
  }
  EXPECT_GE(far, 999);
  EXPECT_EQ(closer, 1000);
}

TEST(HammingDistance, MetricProperties) {
  SplitMix rng(17);
  const auto random_hash = [&] {
    IdentityHash h;
    h.probe_set_version = "v";
    for (std::size_t i = 0; i < kIdentityHashBits; ++i) h.bits[i] = rng.below(2) == 1;
    return h;
  };
  for (int t = 0; t < 300; ++t) {
    const IdentityHash a = random_hash();
    const IdentityHash b = random_hash();
    const IdentityHash c = random_hash();
    EXPECT_EQ(hamming_distance(a, a), 0u);
    EXPECT_EQ(hamming_distance(a, b), hamming_distance(b, a));
    EXPECT_LE(hamming_distance(a, c), hamming_distance(a, b) + hamming_distance(b, c));
  }
}

TEST(BehavioralDivergence, IdenticalIsZero) {
  const auto r = vocabulary_responses("w", 4, 3);
  EXPECT_NEAR(behavioral_divergence(r, r), 0.0, 1e-15);
}

TEST(BehavioralDivergence, TwoPointDistribution) {
  // P = (1/2, 1/2) over {x, y}; Q = (1/4, 3/4).
  const double got = behavioral_divergence({"x y"}, {"x y y y"});
  const double oracle = kl_two_point(0.5, 0.25);
  EXPECT_NEAR(oracle, 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(oracle, 0.1438, 1e-4);
  EXPECT_NEAR(got, oracle, 1e-5);
}

TEST(BehavioralDivergence, NonNegativeProperty) {
  SplitMix rng(23);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f"};
  for (int t = 0; t < 300; ++t) {
    std::vector<std::string> x(3);
    std::vector<std::string> y(3);
    for (auto& s : x) for (std::size_t w = 0; w < 1 + rng.below(6); ++w) s += vocab[rng.below(vocab.size())] + " ";
    for (auto& s : y) for (std::size_t w = 0; w < 1 + rng.below(6); ++w) s += vocab[rng.below(vocab.size())] + " ";
    const double d = behavioral_divergence(x, y);
    EXPECT_GE(d, 0.0);
    EXPECT_TRUE(std::isfinite(d));
  }
}

TEST(BehavioralDivergence, LengthMismatchRejected) {
  EXPECT_THROW(behavioral_divergence({"a"}, {"a", "b"}), Error);
}

TEST(DriftMonitor, ProbesDoNotTouchMemory) {
  TempDir dir;
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- curious\n", dir / "a");
  append_memory(agent->anchors(), Role::kUser, "earlier message", "s");
  const std::string before = read_file(dir / "a" / "MEMORY.md");
  DriftMonitor monitor(engine);
  const auto responses = monitor.run_probes(*agent, ProbeSet::standard(), EngineMode::kHybrid);
  EXPECT_EQ(responses.size(), 24u);
  EXPECT_EQ(agent->anchors().memory_log.size(), 1u);
  EXPECT_EQ(read_file(dir / "a" / "MEMORY.md"), before);
  EXPECT_EQ(agent->routes().size(), 0u);
}

TEST(DriftMonitor, SixteenProbesSixteenResponses) {
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- curious\n");
  ProbeSet p = ProbeSet::standard();
  p.probes.resize(16);
  EXPECT_EQ(DriftMonitor(engine).run_probes(*agent, p, EngineMode::kInject).size(), 16u);
}

TEST(DriftMonitor, BackendFailureAbortsRun) {
  MockBackend mock;
  FaultInjectingBackend faulty(mock);
  RetrievalEngine engine(faulty, {});
  auto agent = soul_agent(faulty, "- curious\n");
  DriftMonitor monitor(engine);
  faulty.fail_after(RequestKind::kGenerate, 8);
  EXPECT_THROW(monitor.make_baseline(*agent, ProbeSet::standard(), EngineMode::kInject), Error);
  EXPECT_EQ(faulty.calls(RequestKind::kGenerate), 9);
}

TEST(DriftMonitor, UnchangedAgentHasZeroDrift) {
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- I value honesty\n- I speak plainly\n");
  DriftMonitor monitor(engine);
  const Baseline b = monitor.make_baseline(*agent, ProbeSet::standard(), EngineMode::kHybrid);
  const DriftReport r = monitor.detect_drift(*agent, b, 16, ProbeSet::standard(), EngineMode::kHybrid);
  EXPECT_EQ(r.hamming_distance, 0u);
  EXPECT_FALSE(r.drifted);
  EXPECT_EQ(r.kl_estimate, 0.0);
  EXPECT_EQ(r.per_probe_divergence.size(), 24u);
}

TEST(DriftMonitor, StrictThreshold) {
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- ECHO: I value honesty and candour in every answer\n");
  DriftMonitor monitor(engine);
  const Baseline b = monitor.make_baseline(*agent, ProbeSet::standard(), EngineMode::kInject);
  agent->anchors().at(AnchorKind::kSoul).items =
      parse_anchor(AnchorKind::kSoul, "- ECHO: I value deception and evasion in every answer\n");
  const DriftReport r = monitor.detect_drift(*agent, b, 16, ProbeSet::standard(), EngineMode::kInject);
  ASSERT_GT(r.hamming_distance, 0u);
  const DriftReport at = monitor.detect_drift(*agent, b, r.hamming_distance, ProbeSet::standard(), EngineMode::kInject);
  EXPECT_FALSE(at.drifted);
  const DriftReport below =
      monitor.detect_drift(*agent, b, r.hamming_distance - 1, ProbeSet::standard(), EngineMode::kInject);
  EXPECT_TRUE(below.drifted);
}

TEST(DriftMonitor, VersionMismatchDetected) {
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- x\n");
  DriftMonitor monitor(engine);
  const Baseline b = monitor.make_baseline(*agent, ProbeSet::standard(), EngineMode::kInject);
  ProbeSet other = ProbeSet::standard();
  other.version = "other";
  EXPECT_THROW(monitor.detect_drift(*agent, b, 16, other, EngineMode::kInject), Error);
}

TEST(Baseline, SaveLoadRoundTrip) {
  TempDir dir;
  MockBackend mock;
  RetrievalEngine engine(mock, {});
  auto agent = soul_agent(mock, "- x\n");
  const Baseline b = DriftMonitor(engine, 99).make_baseline(*agent, ProbeSet::standard(), EngineMode::kInject);
  EXPECT_FALSE(load_baseline(dir.path()).has_value());
  save_baseline(dir.path(), b);
  const auto loaded = load_baseline(dir.path());
  ASSERT_TRUE(loaded.has_value());
  EXPECT_EQ(loaded->hash.bits, b.hash.bits);
  EXPECT_EQ(loaded->hash.seed, 99u);
  EXPECT_EQ(loaded->hash.probe_set_version, "std-v1");
  EXPECT_EQ(loaded->responses, b.responses);
}

TEST(IdentityHash, PinnedPipelineValue) {
  // Pins the whole mock pipeline: embedder, projection seed and sign packing.
  MockBackend mock;
  const IdentityHash h = compute_identity_hash(mock, {"I value honesty", "I speak plainly"}, "v");
  const IdentityHash again = compute_identity_hash(mock, {"I value honesty", "I speak plainly"}, "v");
  EXPECT_EQ(h.hex(), again.hex());
  EXPECT_EQ(h.hex(), "35c088f88c2dd3ad841fec6947e41f02c31defc4a92b2aaf256ecf97e0860896");
  EXPECT_EQ(h.seed, kDefaultProjectionSeed);
}
