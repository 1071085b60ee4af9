#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace anchormem {

using Embedding = Eigen::VectorXd;

enum class RequestKind { kGenerate, kClassify, kSummarize, kEmbed };

struct BackendRequest {
  RequestKind kind = RequestKind::kGenerate;
  std::string prompt_text;
  /// Memory chunk for summarize.
  std::optional<std::string> aux_text;
  int max_output_tokens = 256;

  /// Throws kEmptyPrompt / kInvalidArgument.
  void validate() const;
};

enum class BackendKind { kMock, kHttp };

struct BackendConfig {
  BackendKind kind = BackendKind::kMock;
  std::string endpoint_url;  // e.g. http://127.0.0.1:8000/v1
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::string model_name = "gpt-4o-mini";
  std::string embedding_model = "text-embedding-3-small";
  int embed_dim = 256;
  std::chrono::duration<double> request_timeout{30.0};
  int max_in_flight = 4;
  std::uint64_t seed = 0x5EEDULL;

  void validate() const;
};

/// Single interface for every model call the engine makes. Implementations
/// must be safe to call concurrently.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;

  virtual std::string generate(std::string_view prompt, int max_tokens) = 0;
  /// Probability in [0, 1] that answering `query` needs the whole memory corpus.
  virtual double classify_exhaustive(std::string_view query) = 0;
  virtual std::string summarize(std::string_view query, std::string_view chunk) = 0;
  /// Unit-norm vector of length embed_dim().
  virtual Embedding embed(std::string_view text) = 0;
  virtual int embed_dim() const = 0;
};

/// Deterministic offline backend. Holds no mutable state, so equal inputs
/// give equal outputs across calls, threads and processes.
///
///  - generate: "ECHO:" marker returns the text after it; otherwise
///    "MOCK(" + first 64 characters of the prompt + ")".
///  - classify_exhaustive: 1.0 when the lowercased query contains one of
///    kExhaustiveKeywords, else 0.0.
///  - summarize: "SUM[" + comma-separated entry ids found in the chunk + "]",
///    where ids are read from "[entry N]" markers and nested "SUM[...]" lists.
///  - embed: each normalized token hashes to a sign pattern over embed_dim
///    axes; patterns are summed and L2-normalized. No tokens -> e1.
class MockBackend final : public LlmBackend {
 public:
  struct Options {
    std::uint64_t seed = 0x5EEDULL;
    int embed_dim = 256;
    /// Artificial latency added to generate(); used to exercise turn conflicts.
    std::chrono::milliseconds generate_delay{0};
  };

  static constexpr std::string_view kExhaustiveKeywords[] = {
      "everything", "all of", "patterns", "summarize", "across our", "overall"};
  static constexpr std::size_t kMockPrefixChars = 64;

  MockBackend() : MockBackend(Options{}) {}
  explicit MockBackend(Options options);

  std::string generate(std::string_view prompt, int max_tokens) override;
  double classify_exhaustive(std::string_view query) override;
  std::string summarize(std::string_view query, std::string_view chunk) override;
  Embedding embed(std::string_view text) override;
  int embed_dim() const override { return options_.embed_dim; }

 private:
  Options options_;
};

/// Client for an OpenAI-compatible endpoint (`/chat/completions`,
/// `/embeddings`). In-flight requests are bounded by max_in_flight.
class HttpBackend final : public LlmBackend {
 public:
  explicit HttpBackend(BackendConfig config);
  ~HttpBackend() override;

  std::string generate(std::string_view prompt, int max_tokens) override;
  double classify_exhaustive(std::string_view query) override;
  std::string summarize(std::string_view query, std::string_view chunk) override;
  Embedding embed(std::string_view text) override;
  int embed_dim() const override { return config_.embed_dim; }

  /// JSON body sent for a chat-style request (exposed for wire-format tests).
  std::string chat_body(const BackendRequest& request) const;

 private:
  std::string post(const std::string& path, const std::string& body);
  std::string chat(const BackendRequest& request);

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string base_path_;
  std::counting_semaphore<1024> in_flight_;
};

/// Decorator that starts failing one kind of call after a number of
/// successful ones. Used by tests and the resilience lab to inject backend
/// outages at a chosen point.
class FaultInjectingBackend final : public LlmBackend {
 public:
  explicit FaultInjectingBackend(LlmBackend& inner) : inner_(inner) {}

  /// Calls of `kind` succeed `successes_before_failure` more times, then throw
  /// kBackendUnreachable until clear() is called.
  void fail_after(RequestKind kind, int successes_before_failure);
  void clear();
  int calls(RequestKind kind) const;

  std::string generate(std::string_view prompt, int max_tokens) override;
  double classify_exhaustive(std::string_view query) override;
  std::string summarize(std::string_view query, std::string_view chunk) override;
  Embedding embed(std::string_view text) override;
  int embed_dim() const override { return inner_.embed_dim(); }

 private:
  void tick(RequestKind kind);

  LlmBackend& inner_;
  std::atomic<int> armed_kind_{-1};
  std::atomic<int> remaining_{0};
  std::atomic<int> calls_[4] = {0, 0, 0, 0};
};

std::unique_ptr<LlmBackend> make_backend(const BackendConfig& config);

}  // namespace anchormem
