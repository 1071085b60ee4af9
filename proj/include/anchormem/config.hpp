#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/query_router.hpp"
#include "anchormem/retrieval_engine.hpp"

namespace anchormem {

struct EngineConfig {
  std::filesystem::path root_directory = "agents";
  EngineMode mode = EngineMode::kHybrid;
  EngineOptions engine;
  CostParams cost_params;
  ThresholdSource threshold_source = ThresholdSource::kFixedHalf;
  BackendConfig backend;
  std::map<AnchorKind, double> anchor_weights;  // overrides of the defaults
  std::size_t drift_threshold = 16;
  std::chrono::milliseconds turn_wait{2000};

  /// Throws kConfig on any out-of-range value.
  void validate() const;
};

/// Parses the key-value config format:
///
///   root = "agents"
///   mode = "hybrid"            # inject | rag | hybrid
///   k = 5
///   [cost]
///   lambda1 = 0.05
///   [backend]
///   kind = "mock"
///   [weights]
///   soul = 0.3
///
/// Unknown keys and malformed values are kConfig errors naming the line.
EngineConfig parse_config(std::string_view text);
EngineConfig load_config(const std::filesystem::path& path);

}  // namespace anchormem
