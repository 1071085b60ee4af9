#pragma once

#include <bitset>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/retrieval_engine.hpp"

namespace anchormem {

inline constexpr std::size_t kIdentityHashBits = 256;
inline constexpr std::uint64_t kDefaultProjectionSeed = 0xA11CE5EEDULL;
inline constexpr std::size_t kDefaultDriftThreshold = 16;
/// Additive smoothing for the unigram distributions behind the KL estimate.
inline constexpr double kKlSmoothing = 1e-6;

struct ProbeSet {
  std::vector<std::string> probes;
  std::string version;

  /// Throws kInvalidArgument unless there are at least 16 non-empty probes and a version.
  void validate() const;
  /// 24 prompts over core values, style markers, red lines and preferences.
  static ProbeSet standard();
};

struct IdentityHash {
  std::bitset<kIdentityHashBits> bits;
  std::string probe_set_version;
  std::uint64_t seed = kDefaultProjectionSeed;
  Timestamp created_at{};

  /// 64 hex digits, most significant bit first.
  std::string hex() const;
  static std::bitset<kIdentityHashBits> bits_from_hex(std::string_view hex);
};

/// Throws kProbeSetVersionMismatch when the hashes come from different probe sets.
std::size_t hamming_distance(const IdentityHash& a, const IdentityHash& b);

struct DriftReport {
  std::size_t hamming_distance = 0;
  std::size_t threshold = kDefaultDriftThreshold;
  bool drifted = false;
  std::vector<double> per_probe_divergence;
  double kl_estimate = 0.0;
};

/// Sign bits of `mean` projected onto 256 seeded +-1 axes.
std::bitset<kIdentityHashBits> sign_projection(const Eigen::VectorXd& mean, std::uint64_t seed);

/// Embeds each response, averages the embeddings and sign-projects the mean.
IdentityHash compute_identity_hash(LlmBackend& backend, const std::vector<std::string>& responses,
                                   const std::string& probe_set_version,
                                   std::uint64_t seed = kDefaultProjectionSeed);

/// KL(P_a || P_b) in nats between additively smoothed unigram distributions
/// pooled over each response list. Requires equal lengths.
double behavioral_divergence(const std::vector<std::string>& responses_a,
                             const std::vector<std::string>& responses_b);

/// Baseline persisted as IDENTITY_HASH.baseline beside the anchors.
struct Baseline {
  IdentityHash hash;
  std::vector<std::string> responses;
};

void save_baseline(const std::filesystem::path& agent_dir, const Baseline& baseline);
std::optional<Baseline> load_baseline(const std::filesystem::path& agent_dir);

class DriftMonitor {
 public:
  DriftMonitor(const RetrievalEngine& engine, std::uint64_t seed = kDefaultProjectionSeed)
      : engine_(engine), seed_(seed) {}

  /// One response per probe. Probe exchanges never reach the memory log; a
  /// backend failure aborts the whole run.
  std::vector<std::string> run_probes(const Agent& agent, const ProbeSet& probes, EngineMode mode) const;

  Baseline make_baseline(const Agent& agent, const ProbeSet& probes, EngineMode mode) const;

  /// drifted iff Hamming distance > threshold.
  DriftReport detect_drift(const Agent& agent, const Baseline& baseline, std::size_t threshold,
                           const ProbeSet& probes, EngineMode mode) const;

  std::uint64_t seed() const { return seed_; }
  LlmBackend& backend() const { return engine_.backend(); }

 private:
  const RetrievalEngine& engine_;
  std::uint64_t seed_;
};

}  // namespace anchormem
