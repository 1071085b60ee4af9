#include "anchormem/http_api.hpp"

#include <httplib.h>

#include <functional>
#include <iostream>
#include <json.hpp>

#include "anchormem/error.hpp"

namespace anchormem {

using nlohmann::json;

namespace {

json to_json(const AnchorStatus& s) {
  return {{"kind", anchor_name(s.kind)},
          {"file", anchor_filename(s.kind)},
          {"enabled", s.enabled},
          {"weight", s.weight},
          {"normalized_weight", s.normalized_weight},
          {"items", s.items}};
}

json to_json(const AgentSummary& s) {
  json anchors = json::array();
  for (const auto& a : s.anchors) anchors.push_back(to_json(a));
  return {{"agent_id", s.agent_id},         {"anchors", anchors},
          {"memory_entries", s.memory_entries}, {"last_entry_id", s.last_entry_id},
          {"has_baseline", s.has_baseline}, {"degraded", s.degraded}};
}

json to_json(const AnchorItem& item) {
  json j = {{"text", item.text}};
  j["level"] = item.level ? json(to_string(*item.level)) : json(nullptr);
  j["valence"] = item.valence ? json(to_string(*item.valence)) : json(nullptr);
  j["flags"] = item.flags;
  return j;
}

json to_json(const ChatResult& r) {
  const Answer& a = r.answer;
  json j = {{"agent_id", r.agent_id},
            {"session_id", r.session_id},
            {"mode", to_string(r.mode)},
            {"response", a.response},
            {"provenance", a.context.provenance},
            {"truncated", a.context.truncated},
            {"degraded", a.context.degraded},
            {"chunk_count", a.context.chunk_count},
            {"user_entry_id", r.user_entry_id},
            {"agent_entry_id", r.agent_entry_id},
            {"retrieval_latency_s", a.retrieval_latency.count()},
            {"total_latency_s", a.total_latency.count()}};
  if (a.decision) {
    j["route"] = to_string(a.decision->route);
    j["p_exhaustive"] = a.decision->p_exhaustive;
    j["router_latency"] = a.decision->router_latency.count();
    j["router_latency_ms"] = a.decision->router_latency.count() * 1000.0;
    j["threshold"] = a.decision->threshold_used;
    j["fallback"] = a.decision->fallback;
  } else {
    j["route"] = r.mode == EngineMode::kRag ? json("RAG") : json(nullptr);
    j["p_exhaustive"] = nullptr;
    j["router_latency"] = nullptr;
    j["router_latency_ms"] = nullptr;
    j["threshold"] = nullptr;
    j["fallback"] = false;
  }
  return j;
}

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

json to_json(const DriftReport& d) {
  return {{"hamming_distance", d.hamming_distance},
          {"threshold", d.threshold},
          {"drifted", d.drifted},
          {"per_probe_divergence", d.per_probe_divergence},
          {"kl_estimate", d.kl_estimate}};
}

json to_json(const IdentityHash& h) {
  return {{"hash", h.hex()},
          {"probe_set_version", h.probe_set_version},
          {"seed", h.seed},
          {"created_at", format_timestamp(h.created_at)}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message,
                bool fallback = false) {
  json body = {{"error", code}, {"message", message}};
  if (status == 502) body["fallback"] = fallback;
  send_json(res, status, body);
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  }
  return body;
}

std::string required_string(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_string()) {
    throw Error(ErrorCode::kInvalidArgument, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

AnchorKind kind_param(const std::string& text) {
  auto kind = parse_anchor_kind(text);
  if (!kind) throw Error(ErrorCode::kNotFound, "unknown anchor '" + text + "'");
  return *kind;
}

std::size_t size_param(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, std::string("query parameter '") + key + "' must be a non-negative integer");
  }
}

// Runs a handler, translating library errors into JSON error responses.
httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const FallbackBackendError& e) {
      send_error(res, 502, to_string(e.code()), e.what(), true);
    } catch (const Error& e) {
      send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct ApiServer::Impl {
  AgentService& service;
  httplib::Server server;

  explicit Impl(AgentService& s) : service(s) { install(); }

  void install() {
    server.Get("/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, {{"status", "ok"}});
               }));

    server.Get("/v1/agents", guarded([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, {{"agents", service.list_agents()}});
               }));

    server.Post("/v1/agents", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  const std::string soul = body.value("soul", std::string());
                  send_json(res, 201, to_json(service.create_agent(required_string(body, "agent_id"), soul)));
                }));

    server.Get(R"(/v1/agents/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, to_json(service.summary(req.matches[1])));
               }));

    server.Post(R"(/v1/agents/([^/]+)/fork)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  send_json(res, 201, to_json(service.fork_agent(req.matches[1], required_string(body, "agent_id"))));
                }));

    server.Post(R"(/v1/agents/([^/]+)/chat)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  std::optional<EngineMode> mode;
                  if (body.contains("mode")) {
                    mode = parse_engine_mode(body.value("mode", std::string()));
                    if (!mode) throw Error(ErrorCode::kInvalidArgument, "mode must be inject, rag or hybrid");
                  }
                  const ChatResult r = service.chat(req.matches[1], required_string(body, "session_id"),
                                                    required_string(body, "message"), mode);
                  send_json(res, 200, to_json(r));
                }));

    server.Get(R"(/v1/agents/([^/]+)/anchors/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const AnchorKind kind = kind_param(req.matches[2]);
                 res.status = 200;
                 res.set_content(service.get_anchor(req.matches[1], kind), "text/markdown; charset=utf-8");
               }));

    server.Put(R"(/v1/agents/([^/]+)/anchors/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const AnchorKind kind = kind_param(req.matches[2]);
                 json items = json::array();
                 for (const auto& item : service.put_anchor(req.matches[1], kind, req.body)) {
                   items.push_back(to_json(item));
                 }
                 send_json(res, 200, {{"kind", anchor_name(kind)}, {"items", items}});
               }));

    server.Post(R"(/v1/agents/([^/]+)/failures)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  const AnchorKind kind = kind_param(required_string(body, "kind"));
                  auto enabled = body.find("enabled");
                  if (enabled == body.end() || !enabled->is_boolean()) {
                    throw Error(ErrorCode::kInvalidArgument, "missing boolean field 'enabled'");
                  }
                  send_json(res, 200, to_json(service.set_anchor_enabled(req.matches[1], kind, enabled->get<bool>())));
                }));

    server.Post(R"(/v1/agents/([^/]+)/baseline)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, 201, to_json(service.capture_baseline(req.matches[1]).hash));
                }));

    auto drift = guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::size_t> threshold;
      if (req.has_param("threshold")) threshold = size_param(req, "threshold", 0);
      send_json(res, 200, to_json(service.drift(req.matches[1], threshold)));
    });
    server.Get(R"(/v1/agents/([^/]+)/drift)", drift);
    server.Post(R"(/v1/agents/([^/]+)/drift)", drift);

    server.Get(R"(/v1/agents/([^/]+)/routes)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 json routes = json::array();
                 for (const auto& r : service.routes(req.matches[1], size_param(req, "limit", 50))) {
                   routes.push_back(to_json(r));
                 }
                 send_json(res, 200, {{"routes", routes}});
               }));

    server.Get(R"(/v1/agents/([^/]+)/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const SessionState s = service.session(req.matches[1], req.matches[2]);
                 send_json(res, 200,
                           {{"session_id", s.session_id},
                            {"agent_id", s.agent_id},
                            {"mode", to_string(s.mode)},
                            {"turn_count", s.turn_count},
                            {"created_at", s.created_at},
                            {"last_seen", s.last_seen}});
               }));
  }
};

ApiServer::ApiServer(AgentService& service) : impl_(std::make_unique<Impl>(service)) {}
ApiServer::~ApiServer() = default;

bool ApiServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }
int ApiServer::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool ApiServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void ApiServer::stop() { impl_->server.stop(); }
void ApiServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace anchormem
