#include "anchormem/backend.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "anchormem/error.hpp"
#include "anchormem/hashing.hpp"

namespace anchormem {

using nlohmann::json;

void BackendRequest::validate() const {
  if (prompt_text.empty() && kind != RequestKind::kEmbed) {
    throw Error(ErrorCode::kEmptyPrompt, "backend request has an empty prompt");
  }
  if (max_output_tokens < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_output_tokens must be >= 1");
  }
}

void BackendConfig::validate() const {
  if (embed_dim < 8) throw Error(ErrorCode::kConfig, "embed_dim must be >= 8");
  if (max_in_flight < 1) throw Error(ErrorCode::kConfig, "max_in_flight must be >= 1");
  if (request_timeout.count() <= 0) throw Error(ErrorCode::kConfig, "request_timeout must be positive");
  if (kind == BackendKind::kHttp) {
    static const std::regex kUrl(R"(^https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?(/.*)?$)");
    if (!std::regex_match(endpoint_url, kUrl)) {
      throw Error(ErrorCode::kConfig, "endpoint_url is not a valid http(s) URL: '" + endpoint_url + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// MockBackend

namespace {

// Cuts at most `n` bytes without splitting a UTF-8 sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t n) {
  if (s.size() <= n) return s;
  while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  return s.substr(0, n);
}

void append_ids(std::vector<long long>& ids, std::string_view digits) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec == std::errc() && ptr != digits.data() &&
      std::find(ids.begin(), ids.end(), value) == ids.end()) {
    ids.push_back(value);
  }
}

// Ids from "[entry N]" markers and "SUM[a,b,c]" lists, in first-seen order.
std::vector<long long> chunk_entry_ids(std::string_view chunk) {
  std::vector<long long> ids;
  std::size_t i = 0;
  while (i < chunk.size()) {
    if (chunk.compare(i, 7, "[entry ") == 0) {
      std::size_t j = i + 7;
      std::size_t k = j;
      while (k < chunk.size() && std::isdigit(static_cast<unsigned char>(chunk[k]))) ++k;
      if (k > j && k < chunk.size() && chunk[k] == ']') append_ids(ids, chunk.substr(j, k - j));
      i = k;
    } else if (chunk.compare(i, 4, "SUM[") == 0) {
      std::size_t j = i + 4;
      std::size_t close = chunk.find(']', j);
      if (close == std::string_view::npos) break;
      std::string_view list = chunk.substr(j, close - j);
      std::size_t start = 0;
      while (start <= list.size()) {
        std::size_t comma = list.find(',', start);
        if (comma == std::string_view::npos) comma = list.size();
        if (comma > start) append_ids(ids, list.substr(start, comma - start));
        start = comma + 1;
      }
      i = close + 1;
    } else {
      ++i;
    }
  }
  return ids;
}

}  // namespace

MockBackend::MockBackend(Options options) : options_(options) {
  if (options_.embed_dim < 8) throw Error(ErrorCode::kConfig, "embed_dim must be >= 8");
}

std::string MockBackend::generate(std::string_view prompt, int max_tokens) {
  BackendRequest{RequestKind::kGenerate, std::string(prompt), std::nullopt, max_tokens}.validate();
  if (options_.generate_delay.count() > 0) std::this_thread::sleep_for(options_.generate_delay);
  if (auto pos = prompt.find("ECHO:"); pos != std::string_view::npos) {
    std::string_view suffix = prompt.substr(pos + 5);
    if (!suffix.empty()) return std::string(suffix);
  }
  std::string out = "MOCK(";
  out += utf8_prefix(prompt, kMockPrefixChars);
  out += ')';
  return out;
}

double MockBackend::classify_exhaustive(std::string_view query) {
  BackendRequest{RequestKind::kClassify, std::string(query), std::nullopt, 1}.validate();
  std::string lowered(query);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (std::string_view keyword : kExhaustiveKeywords) {
    if (lowered.find(keyword) != std::string::npos) return 1.0;
  }
  return 0.0;
}

std::string MockBackend::summarize(std::string_view query, std::string_view chunk) {
  (void)query;
  std::string out = "SUM[";
  bool first = true;
  for (long long id : chunk_entry_ids(chunk)) {
    if (!first) out += ',';
    out += std::to_string(id);
    first = false;
  }
  out += ']';
  return out;
}

Embedding MockBackend::embed(std::string_view text) {
  const int dim = options_.embed_dim;
  Embedding v = Embedding::Zero(dim);
  const auto tokens = normalized_tokens(text);
  if (tokens.empty()) {
    v[0] = 1.0;
    return v;
  }
  const std::uint64_t salt = splitmix64(options_.seed);
  for (const auto& token : tokens) {
    const std::uint64_t h = fnv1a64(token, 0xCBF29CE484222325ULL ^ salt);
    for (int d = 0; d < dim; ++d) {
      v[d] += (splitmix64(h + static_cast<std::uint64_t>(d)) >> 63) ? 1.0 : -1.0;
    }
  }
  const double norm = v.norm();
  if (norm == 0.0) {
    // Perfect cancellation of sign patterns; fall back to the empty-input vector.
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

// ---------------------------------------------------------------------------
// HttpBackend

namespace {

constexpr const char* kClassifySystem =
    "You route queries for an assistant with a long conversation memory. "
    "Answer with a single number between 0 and 1: the probability that answering "
    "the query requires synthesizing across the entire memory (exhaustive) rather "
    "than retrieving a few specific entries (focused). Output only the number.";

constexpr const char* kSummarizeSystem =
    "Summarize the memory chunk below with respect to the user's query. Keep every "
    "\"[entry N]\" identifier you rely on and every \"SUM[...]\" identifier list verbatim.";

}  // namespace

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), in_flight_(1) {
  config_.kind = BackendKind::kHttp;
  config_.validate();
  const std::string& url = config_.endpoint_url;
  const std::size_t scheme_end = url.find("://");
  const std::size_t path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  // The semaphore was constructed with one permit; top it up to the configured limit.
  in_flight_.release(std::min(config_.max_in_flight, 1024) - 1);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::post(const std::string& path, const std::string& body) {
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout);
  const auto secs = static_cast<time_t>(timeout.count() / 1000000);
  const auto usecs = static_cast<time_t>(timeout.count() % 1000000);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env_var.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto result = client.Post(base_path_ + path, headers, body, "application/json");
  if (!result) {
    throw Error(ErrorCode::kBackendUnreachable,
                "backend " + scheme_host_port_ + " unreachable: " + httplib::to_string(result.error()));
  }
  if (result->status != 200) {
    throw Error(ErrorCode::kBackendProtocol,
                "backend returned HTTP " + std::to_string(result->status) + " for " + path);
  }
  return result->body;
}

std::string HttpBackend::chat_body(const BackendRequest& request) const {
  json messages = json::array();
  switch (request.kind) {
    case RequestKind::kClassify:
      messages.push_back({{"role", "system"}, {"content", kClassifySystem}});
      messages.push_back({{"role", "user"}, {"content", request.prompt_text}});
      break;
    case RequestKind::kSummarize:
      messages.push_back({{"role", "system"}, {"content", kSummarizeSystem}});
      messages.push_back({{"role", "user"},
                          {"content", "Query: " + request.prompt_text + "\n\nMemory chunk:\n" +
                                          request.aux_text.value_or("")}});
      break;
    case RequestKind::kGenerate:
    case RequestKind::kEmbed:
      messages.push_back({{"role", "user"}, {"content", request.prompt_text}});
      break;
  }
  json body = {{"model", config_.model_name},
               {"messages", std::move(messages)},
               {"max_tokens", request.max_output_tokens},
               {"temperature", 0}};
  return body.dump();
}

std::string HttpBackend::chat(const BackendRequest& request) {
  request.validate();
  const std::string raw = post("/chat/completions", chat_body(request));
  try {
    const json reply = json::parse(raw);
    std::string content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    if (content.empty()) throw Error(ErrorCode::kBackendProtocol, "backend returned empty content");
    return content;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBackendProtocol, std::string("malformed chat completion: ") + e.what());
  }
}

std::string HttpBackend::generate(std::string_view prompt, int max_tokens) {
  return chat({RequestKind::kGenerate, std::string(prompt), std::nullopt, max_tokens});
}

double HttpBackend::classify_exhaustive(std::string_view query) {
  const std::string reply = chat({RequestKind::kClassify, std::string(query), std::nullopt, 8});
  static const std::regex kNumber(R"([0-9]*\.?[0-9]+)");
  std::smatch m;
  if (!std::regex_search(reply, m, kNumber)) {
    throw Error(ErrorCode::kBackendProtocol, "router reply is not a probability: '" + reply + "'");
  }
  return std::clamp(std::stod(m.str()), 0.0, 1.0);
}

std::string HttpBackend::summarize(std::string_view query, std::string_view chunk) {
  return chat({RequestKind::kSummarize, std::string(query), std::string(chunk), 512});
}

Embedding HttpBackend::embed(std::string_view text) {
  Embedding v = Embedding::Zero(config_.embed_dim);
  if (text.empty()) {
    v[0] = 1.0;
    return v;
  }
  std::string raw;
  try {
    raw = post("/embeddings", json{{"model", config_.embedding_model}, {"input", text}}.dump());
  } catch (const Error& e) {
    throw Error(ErrorCode::kEmbeddingFailure, e.what());
  }
  try {
    const auto values = json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != config_.embed_dim) {
      throw Error(ErrorCode::kEmbeddingFailure,
                  "embedding has dimension " + std::to_string(values.size()) + ", expected " +
                      std::to_string(config_.embed_dim));
    }
    v = Eigen::Map<const Embedding>(values.data(), config_.embed_dim);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kEmbeddingFailure, std::string("malformed embedding reply: ") + e.what());
  }
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kEmbeddingFailure, "embedding has zero or non-finite norm");
  }
  return v / norm;
}

// ---------------------------------------------------------------------------
// FaultInjectingBackend

void FaultInjectingBackend::fail_after(RequestKind kind, int successes_before_failure) {
  remaining_.store(successes_before_failure);
  armed_kind_.store(static_cast<int>(kind));
}

void FaultInjectingBackend::clear() { armed_kind_.store(-1); }

int FaultInjectingBackend::calls(RequestKind kind) const {
  return calls_[static_cast<int>(kind)].load();
}

void FaultInjectingBackend::tick(RequestKind kind) {
  calls_[static_cast<int>(kind)].fetch_add(1);
  if (armed_kind_.load() != static_cast<int>(kind)) return;
  if (remaining_.fetch_sub(1) <= 0) {
    throw Error(kind == RequestKind::kEmbed ? ErrorCode::kEmbeddingFailure : ErrorCode::kBackendUnreachable,
                "injected backend failure");
  }
}

std::string FaultInjectingBackend::generate(std::string_view prompt, int max_tokens) {
  tick(RequestKind::kGenerate);
  return inner_.generate(prompt, max_tokens);
}

double FaultInjectingBackend::classify_exhaustive(std::string_view query) {
  tick(RequestKind::kClassify);
  return inner_.classify_exhaustive(query);
}

std::string FaultInjectingBackend::summarize(std::string_view query, std::string_view chunk) {
  tick(RequestKind::kSummarize);
  return inner_.summarize(query, chunk);
}

Embedding FaultInjectingBackend::embed(std::string_view text) {
  tick(RequestKind::kEmbed);
  return inner_.embed(text);
}

std::unique_ptr<LlmBackend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.kind == BackendKind::kHttp) return std::make_unique<HttpBackend>(config);
  MockBackend::Options options;
  options.seed = config.seed;
  options.embed_dim = config.embed_dim;
  return std::make_unique<MockBackend>(options);
}

}  // namespace anchormem
