#include <gtest/gtest.h>

#include <future>
#include <thread>

#include <json.hpp>

#include "anchormem/agent_service.hpp"
#include "anchormem/error.hpp"
#include "anchormem/http_api.hpp"

#include <httplib.h>
#include "test_support.hpp"

using namespace anchormem;
using anchormem::testing::TempDir;
using nlohmann::json;

namespace {

EngineConfig config_in(const TempDir& dir) {
  EngineConfig c;
  c.root_directory = dir / "agents";
  return c;
}

// Router classifier is down and so is generation: the turn falls back to RAG
// and then fails.
class ClassifyAndGenerateDown final : public LlmBackend {
 public:
  std::string generate(std::string_view, int) override {
    throw Error(ErrorCode::kBackendUnreachable, "generate down");
  }
  double classify_exhaustive(std::string_view) override {
    throw Error(ErrorCode::kBackendUnreachable, "classify down");
  }
  std::string summarize(std::string_view q, std::string_view c) override { return mock_.summarize(q, c); }
  Embedding embed(std::string_view t) override { return mock_.embed(t); }
  int embed_dim() const override { return mock_.embed_dim(); }

 private:
  MockBackend mock_;
};

class ServerFixture {
 public:
  explicit ServerFixture(AgentService& service) : server_(service) {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ServerFixture() {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }
  int port() const { return port_; }

 private:
  ApiServer server_;
  int port_ = -1;
  std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int* status = nullptr) {
  auto res = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(res) << path;
  if (!res) return {};
  if (status) *status = res->status;
  return json::parse(res->body, nullptr, false);
}

}  // namespace

TEST(AgentService, CreateListAndCollide) {
  TempDir dir;
  AgentService svc(config_in(dir));
  EXPECT_TRUE(svc.list_agents().empty());
  const AgentSummary s = svc.create_agent("ada", "- I am careful\n");
  EXPECT_EQ(s.agent_id, "ada");
  EXPECT_EQ(s.memory_entries, 0u);
  EXPECT_EQ(svc.list_agents(), std::vector<std::string>{"ada"});
  try {
    svc.create_agent("ada");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIdCollision);
  }
  EXPECT_THROW(svc.create_agent("../escape"), Error);
  EXPECT_THROW(svc.create_agent(""), Error);
}

TEST(AgentService, ReloadsAgentsFromRoot) {
  TempDir dir;
  {
    AgentService svc(config_in(dir));
    svc.create_agent("ada", "- I am careful\n");
    svc.chat("ada", "s1", "remember the launch date is march");
  }
  AgentService again(config_in(dir));
  EXPECT_EQ(again.list_agents(), std::vector<std::string>{"ada"});
  EXPECT_EQ(again.summary("ada").memory_entries, 2u);
  EXPECT_EQ(again.summary("ada").last_entry_id, 2);
}

TEST(AgentService, ChatAppendsTwoEntries) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  const ChatResult r = svc.chat("ada", "s", "ECHO: hello");
  EXPECT_NE(r.answer.response.find("hello"), std::string::npos) << r.answer.response;
  EXPECT_EQ(r.user_entry_id, 1);
  EXPECT_EQ(r.agent_entry_id, 2);
  try {
    svc.chat("ada", "s", "");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyPrompt);
  }
  try {
    svc.chat("nobody", "s", "hi");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
}

TEST(AgentService, ForkIsIndependent) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("parent", "- steady\n");
  svc.chat("parent", "s", "first");
  svc.fork_agent("parent", "child");
  svc.chat("child", "s", "only in child");
  EXPECT_EQ(svc.summary("parent").memory_entries, 2u);
  EXPECT_EQ(svc.summary("child").memory_entries, 4u);
  EXPECT_EQ(svc.get_anchor("child", AnchorKind::kSoul), svc.get_anchor("parent", AnchorKind::kSoul));
}

TEST(AgentService, SessionState) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  svc.chat("ada", "s1", "one");
  svc.chat("ada", "s1", "two");
  svc.chat("ada", "s2", "three");
  const SessionState s = svc.session("ada", "s1");
  EXPECT_EQ(s.turn_count, 2u);
  EXPECT_EQ(s.mode, EngineMode::kHybrid);
  EXPECT_FALSE(s.created_at.empty());
  EXPECT_THROW(svc.session("ada", "missing"), Error);
}

TEST(ErrorMapping, ExitCodesAndStatuses) {
  EXPECT_EQ(exit_code_for(ErrorCode::kConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::kInvalidParams), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::kBackendUnreachable), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::kBackendProtocol), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::kNotFound), 1);
  EXPECT_EQ(http_status_for(ErrorCode::kNotFound), 404);
  EXPECT_EQ(http_status_for(ErrorCode::kConflict), 409);
  EXPECT_EQ(http_status_for(ErrorCode::kNoBaseline), 409);
  EXPECT_EQ(http_status_for(ErrorCode::kForbidden), 403);
  EXPECT_EQ(http_status_for(ErrorCode::kEmptyPrompt), 422);
  EXPECT_EQ(http_status_for(ErrorCode::kEmbeddingFailure), 502);
  EXPECT_EQ(http_status_for(ErrorCode::kStorageWriteFailure), 500);
}

TEST(HttpApi, HealthAndUnknownAgent) {
  TempDir dir;
  AgentService svc(config_in(dir));
  ServerFixture srv(svc);
  auto c = srv.client();
  auto health = c.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  int status = 0;
  const json body = post(c, "/v1/agents/ghost/chat", {{"session_id", "s"}, {"message", "hi"}}, &status);
  EXPECT_EQ(status, 404);
  EXPECT_EQ(body["error"], "not-found");
}

TEST(HttpApi, CreateChatAndRoutes) {
  TempDir dir;
  AgentService svc(config_in(dir));
  ServerFixture srv(svc);
  auto c = srv.client();
  int status = 0;
  post(c, "/v1/agents", {{"agent_id", "ada"}, {"soul", "- I am careful\n"}}, &status);
  EXPECT_EQ(status, 201);
  post(c, "/v1/agents", {{"agent_id", "ada"}}, &status);
  EXPECT_EQ(status, 409);

  const char* messages[] = {"What did we decide about the API?", "summarize everything we discussed",
                            "where did I park"};
  for (const char* m : messages) {
    const json r = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", m}}, &status);
    EXPECT_EQ(status, 200) << r.dump();
  }
  const json last = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "what is my name"}}, &status);
  EXPECT_FALSE(last["response"].get<std::string>().empty());
  EXPECT_EQ(last["route"], "RAG");
  EXPECT_EQ(last["user_entry_id"], 7);
  EXPECT_TRUE(last["router_latency_ms"].is_number());

  auto routes = c.Get("/v1/agents/ada/routes?limit=3");
  ASSERT_TRUE(routes);
  const json rj = json::parse(routes->body);
  ASSERT_EQ(rj["routes"].size(), 3u);
  EXPECT_EQ(rj["routes"][2]["route"], "RLM");
  EXPECT_GE(rj["routes"][0]["timestamp"].get<std::string>(), rj["routes"][2]["timestamp"].get<std::string>());
  EXPECT_FALSE(rj["routes"][0].contains("query_text"));

  const json empty = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", ""}}, &status);
  EXPECT_EQ(status, 422);
  EXPECT_EQ(empty["error"], "empty-prompt");
}

TEST(HttpApi, InjectModeHasNoRoute) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  ServerFixture srv(svc);
  auto c = srv.client();
  const json r = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "hi"}, {"mode", "inject"}});
  EXPECT_TRUE(r["route"].is_null());
  EXPECT_EQ(r["mode"], "inject");
}

TEST(HttpApi, AnchorsReadWrite) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  ServerFixture srv(svc);
  auto c = srv.client();

  const std::string soul = "# Who I am\n\n- I value honesty\n-   odd   spacing kept\n";
  auto put = c.Put("/v1/agents/ada/anchors/soul", soul, "text/markdown");
  ASSERT_TRUE(put);
  EXPECT_EQ(put->status, 200);
  auto get = c.Get("/v1/agents/ada/anchors/soul");
  ASSERT_TRUE(get);
  EXPECT_EQ(get->body, soul);

  auto forbidden = c.Put("/v1/agents/ada/anchors/memory", "## x\n", "text/markdown");
  ASSERT_TRUE(forbidden);
  EXPECT_EQ(forbidden->status, 403);

  auto salience = c.Put("/v1/agents/ada/anchors/salience", "- Launch: HIGH importance, positive valence\n- Vibes: SHOUTY importance\n", "text/markdown");
  ASSERT_TRUE(salience);
  EXPECT_EQ(salience->status, 200);
  const json items = json::parse(salience->body)["items"];
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0]["level"], "HIGH");
  bool unparsed = false;
  for (const auto& f : items[1]["flags"]) unparsed |= f == "UNPARSED";
  EXPECT_TRUE(unparsed) << items.dump();

  auto unknown = c.Get("/v1/agents/ada/anchors/diary");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 404);
}

TEST(HttpApi, DisabledMemoryGivesEmptyProvenance) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  svc.chat("ada", "s", "the launch is in march");
  ServerFixture srv(svc);
  auto c = srv.client();
  int status = 0;
  const json summary = post(c, "/v1/agents/ada/failures", {{"kind", "memory"}, {"enabled", false}}, &status);
  EXPECT_EQ(status, 200);
  const json r = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "the launch is in march"}});
  EXPECT_TRUE(r["provenance"].empty()) << r.dump();
  EXPECT_EQ(r["user_entry_id"], 3);

  post(c, "/v1/agents/ada/failures", {{"kind", "memory"}, {"enabled", true}});
  const json healed = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "the launch is in march"}});
  EXPECT_FALSE(healed["provenance"].empty());
}

TEST(HttpApi, DriftRequiresBaseline) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada", "- I value honesty\n");
  ServerFixture srv(svc);
  auto c = srv.client();
  auto none = c.Get("/v1/agents/ada/drift");
  ASSERT_TRUE(none);
  EXPECT_EQ(none->status, 409);
  EXPECT_EQ(json::parse(none->body)["error"], "no-baseline");

  int status = 0;
  const json b = post(c, "/v1/agents/ada/baseline", json::object(), &status);
  EXPECT_EQ(status, 201);
  EXPECT_EQ(b["hash"].get<std::string>().size(), 64u);
  auto d = c.Get("/v1/agents/ada/drift");
  ASSERT_TRUE(d);
  const json dj = json::parse(d->body);
  EXPECT_EQ(dj["hamming_distance"], 0);
  EXPECT_EQ(dj["drifted"], false);
  EXPECT_EQ(dj["threshold"], 16);
}

TEST(HttpApi, ConcurrentTurnConflicts) {
  TempDir dir;
  EngineConfig cfg = config_in(dir);
  cfg.turn_wait = std::chrono::milliseconds(50);
  MockBackend::Options opts;
  opts.generate_delay = std::chrono::milliseconds(800);
  AgentService svc(cfg, std::make_unique<MockBackend>(opts));
  svc.create_agent("ada");
  ServerFixture srv(svc);

  auto slow = std::async(std::launch::async, [&] {
    auto c = srv.client();
    int status = 0;
    post(c, "/v1/agents/ada/chat", {{"session_id", "a"}, {"message", "first"}}, &status);
    return status;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  auto c = srv.client();
  int status = 0;
  const json r = post(c, "/v1/agents/ada/chat", {{"session_id", "b"}, {"message", "second"}}, &status);
  EXPECT_EQ(status, 409);
  EXPECT_EQ(r["error"], "conflict");
  EXPECT_EQ(slow.get(), 200);
  EXPECT_EQ(svc.summary("ada").memory_entries, 2u);
}

TEST(HttpApi, FallbackFailureIsFlagged) {
  TempDir dir;
  ClassifyAndGenerateDown backend;
  AgentService svc(config_in(dir), backend);
  svc.create_agent("ada");
  ServerFixture srv(svc);
  auto c = srv.client();
  int status = 0;
  const json r = post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "hello"}}, &status);
  EXPECT_EQ(status, 502);
  EXPECT_EQ(r["fallback"], true);
  EXPECT_EQ(svc.summary("ada").memory_entries, 1u);

  const json inject = post(c, "/v1/agents/ada/chat",
                           {{"session_id", "s"}, {"message", "hello"}, {"mode", "inject"}}, &status);
  EXPECT_EQ(status, 502);
  EXPECT_EQ(inject["fallback"], false);
}

TEST(HttpApi, MalformedBody) {
  TempDir dir;
  AgentService svc(config_in(dir));
  svc.create_agent("ada");
  ServerFixture srv(svc);
  auto c = srv.client();
  auto res = c.Post("/v1/agents/ada/chat", "not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  int status = 0;
  post(c, "/v1/agents/ada/chat", {{"session_id", "s"}, {"message", "x"}, {"mode", "turbo"}}, &status);
  EXPECT_EQ(status, 422);
}
