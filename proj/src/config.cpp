#include "anchormem/config.hpp"

#include <cctype>
#include <charconv>
#include <functional>

#include "anchormem/error.hpp"

namespace anchormem {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Strips a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

struct Value {
  std::string text;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kConfig, "config line " + std::to_string(line) + ": " + what);
  }

  std::string str() const { return text; }

  double number() const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail("expected a number, got '" + text + "'");
    return v;
  }

  std::size_t count() const {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail("expected a non-negative integer, got '" + text + "'");
    return v;
  }

  std::uint64_t u64() const {
    std::uint64_t v = 0;
    const bool hex = text.starts_with("0x") || text.starts_with("0X");
    const char* begin = text.data() + (hex ? 2 : 0);
    auto [ptr, ec] = std::from_chars(begin, text.data() + text.size(), v, hex ? 16 : 10);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail("expected an unsigned integer, got '" + text + "'");
    return v;
  }

  bool boolean() const {
    if (text == "true") return true;
    if (text == "false") return false;
    fail("expected true or false, got '" + text + "'");
  }
};

}  // namespace

void EngineConfig::validate() const {
  engine.validate();
  try {
    cost_params.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  backend.validate();
  for (const auto& [kind, w] : anchor_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::kConfig, "anchor weights must lie in [0, 1]");
  }
  if (drift_threshold > 256) throw Error(ErrorCode::kConfig, "drift_threshold must be <= 256");
  if (root_directory.empty()) throw Error(ErrorCode::kConfig, "root must be set");
}

EngineConfig parse_config(std::string_view text) {
  EngineConfig cfg;
  using Setter = std::function<void(const Value&)>;
  const std::map<std::string, Setter, std::less<>> setters = {
      {"root", [&](const Value& v) { cfg.root_directory = v.str(); }},
      {"mode",
       [&](const Value& v) {
         auto m = parse_engine_mode(v.text);
         if (!m) v.fail("mode must be inject, rag or hybrid");
         cfg.mode = *m;
       }},
      {"k", [&](const Value& v) { cfg.engine.k = v.count(); }},
      {"chunk_size", [&](const Value& v) { cfg.engine.chunk_size = v.count(); }},
      {"fanin", [&](const Value& v) { cfg.engine.fanin = v.count(); }},
      {"budget_tokens", [&](const Value& v) { cfg.engine.budget_tokens = v.count(); }},
      {"max_output_tokens", [&](const Value& v) { cfg.engine.max_output_tokens = static_cast<int>(v.count()); }},
      {"leaf_parallelism", [&](const Value& v) { cfg.engine.leaf_parallelism = v.count(); }},
      {"store_query_text", [&](const Value& v) { cfg.engine.store_query_text = v.boolean(); }},
      {"threshold_source",
       [&](const Value& v) {
         if (v.text == "fixed_half") {
           cfg.threshold_source = ThresholdSource::kFixedHalf;
         } else if (v.text == "derived_boundary") {
           cfg.threshold_source = ThresholdSource::kDerivedBoundary;
         } else {
           v.fail("threshold_source must be fixed_half or derived_boundary");
         }
       }},
      {"drift_threshold", [&](const Value& v) { cfg.drift_threshold = v.count(); }},
      {"turn_wait_ms", [&](const Value& v) { cfg.turn_wait = std::chrono::milliseconds(v.count()); }},
      {"cost.lambda1", [&](const Value& v) { cfg.cost_params.latency_weight = v.number(); }},
      {"cost.lambda2", [&](const Value& v) { cfg.cost_params.accuracy_weight = v.number(); }},
      {"cost.t_rag", [&](const Value& v) { cfg.cost_params.rag_latency = Seconds(v.number()); }},
      {"cost.t_rlm", [&](const Value& v) { cfg.cost_params.rlm_latency = Seconds(v.number()); }},
      {"backend.kind",
       [&](const Value& v) {
         if (v.text == "mock") {
           cfg.backend.kind = BackendKind::kMock;
         } else if (v.text == "http") {
           cfg.backend.kind = BackendKind::kHttp;
         } else {
           v.fail("backend.kind must be mock or http");
         }
       }},
      {"backend.endpoint_url", [&](const Value& v) { cfg.backend.endpoint_url = v.str(); }},
      {"backend.api_key_env_var", [&](const Value& v) { cfg.backend.api_key_env_var = v.str(); }},
      {"backend.model", [&](const Value& v) { cfg.backend.model_name = v.str(); }},
      {"backend.embedding_model", [&](const Value& v) { cfg.backend.embedding_model = v.str(); }},
      {"backend.embed_dim", [&](const Value& v) { cfg.backend.embed_dim = static_cast<int>(v.count()); }},
      {"backend.request_timeout", [&](const Value& v) { cfg.backend.request_timeout = Seconds(v.number()); }},
      {"backend.max_in_flight", [&](const Value& v) { cfg.backend.max_in_flight = static_cast<int>(v.count()); }},
      {"backend.seed", [&](const Value& v) { cfg.backend.seed = v.u64(); }},
  };

  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = trim(strip_comment(text.substr(start, end - start)));
    start = end + 1;
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') Value{"", line_no}.fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "cost" && section != "backend" && section != "weights") {
        Value{"", line_no}.fail("unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) Value{"", line_no}.fail("expected key = value");
    const std::string key = std::string(trim(line.substr(0, eq)));
    std::string value = std::string(trim(line.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const Value v{value, line_no};

    if (section == "weights") {
      auto kind = parse_anchor_kind(key);
      if (!kind) v.fail("unknown anchor '" + key + "'");
      cfg.anchor_weights[*kind] = v.number();
      continue;
    }
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = setters.find(full);
    if (it == setters.end()) v.fail("unknown key '" + full + "'");
    it->second(v);
  }
  cfg.validate();
  return cfg;
}

EngineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return parse_config(text);
}

}  // namespace anchormem
