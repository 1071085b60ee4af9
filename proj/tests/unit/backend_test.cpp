#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "anchormem/backend.hpp"
#include "anchormem/error.hpp"

#include <httplib.h>

using namespace anchormem;
using nlohmann::json;

TEST(MockBackend, EchoMarkerReturnsSuffix) {
  MockBackend mock;
  EXPECT_EQ(mock.generate("ECHO:hello", 16), "hello");
  EXPECT_EQ(mock.generate("prefix text ECHO:tail part", 16), "tail part");
}

TEST(MockBackend, GenerateWithoutMarkerWrapsFirst64Chars) {
  MockBackend mock;
  const std::string prompt(100, 'x');
  EXPECT_EQ(mock.generate(prompt, 16), "MOCK(" + std::string(64, 'x') + ")");
  EXPECT_EQ(mock.generate("short", 16), "MOCK(short)");
}

TEST(MockBackend, GenerateDoesNotSplitMultibyteCharacters) {
  MockBackend mock;
  // 63 ASCII bytes followed by a two-byte character straddling the 64-byte cut.
  const std::string prompt = std::string(63, 'a') + "\xC3\xA9" + "tail";
  const std::string out = mock.generate(prompt, 16);
  EXPECT_EQ(out, "MOCK(" + std::string(63, 'a') + ")");
}

TEST(MockBackend, GenerateIsPure) {
  MockBackend a;
  MockBackend b;
  EXPECT_EQ(a.generate("same prompt", 8), a.generate("same prompt", 8));
  EXPECT_EQ(a.generate("same prompt", 8), b.generate("same prompt", 8));
}

TEST(MockBackend, ClassifyKeywordOracle) {
  MockBackend mock;
  EXPECT_EQ(mock.classify_exhaustive("What is my name?"), 0.0);
  EXPECT_EQ(mock.classify_exhaustive("Summarize everything we've discussed"), 1.0);
  EXPECT_EQ(mock.classify_exhaustive("What did we decide about the API?"), 0.0);
  EXPECT_EQ(mock.classify_exhaustive("What patterns do you notice across our conversations?"), 1.0);
  EXPECT_EQ(mock.classify_exhaustive("OVERALL, how did it go"), 1.0);
}

TEST(MockBackend, ClassifyRejectsEmptyQuery) {
  MockBackend mock;
  try {
    mock.classify_exhaustive("");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyPrompt);
  }
  EXPECT_THROW(mock.generate("", 8), Error);
}

TEST(MockBackend, SummarizeListsEntryIds) {
  MockBackend mock;
  EXPECT_EQ(mock.summarize("q", "[entry 3] user: a\n[entry 4] agent: b\n"), "SUM[3,4]");
  EXPECT_EQ(mock.summarize("q", "SUM[1,2]\nSUM[3]\n"), "SUM[1,2,3]");
  EXPECT_EQ(mock.summarize("q", "no ids here"), "SUM[]");
}

TEST(MockBackend, EmbedEmptyIsFirstBasisVector) {
  MockBackend mock;
  const Embedding v = mock.embed("");
  ASSERT_EQ(v.size(), 256);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(v.tail(255).squaredNorm(), 0.0);
}

TEST(MockBackend, EmbedIsUnitNormAndDeterministic) {
  MockBackend mock;
  for (const char* text : {"abc", "the quick brown fox", "a", "Hello, World!"}) {
    const Embedding v = mock.embed(text);
    EXPECT_NEAR(v.norm(), 1.0, 1e-9) << text;
    EXPECT_EQ(v, mock.embed(text)) << text;
  }
}

TEST(MockBackend, SharedTokensGivePositiveCosine) {
  MockBackend mock;
  const Embedding a = mock.embed("my favourite colour is teal");
  const Embedding b = mock.embed("what is my favourite colour");
  const Embedding c = mock.embed("zebra xylophone quantum");
  EXPECT_GT(a.dot(b), a.dot(c));
  EXPECT_GT(a.dot(b), 0.3);
}

TEST(MockBackend, EmbedDimensionFollowsOptions) {
  MockBackend mock(MockBackend::Options{.seed = 9, .embed_dim = 32});
  EXPECT_EQ(mock.embed("abc").size(), 32);
  EXPECT_EQ(mock.embed_dim(), 32);
}

TEST(BackendConfig, RejectsBadValues) {
  BackendConfig cfg;
  cfg.embed_dim = 4;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.kind = BackendKind::kHttp;
  cfg.endpoint_url = "not a url";
  EXPECT_THROW(cfg.validate(), Error);
  cfg.endpoint_url = "http://127.0.0.1:9/v1";
  EXPECT_NO_THROW(cfg.validate());
}

TEST(FaultInjectingBackend, FailsAfterConfiguredSuccesses) {
  MockBackend mock;
  FaultInjectingBackend faulty(mock);
  faulty.fail_after(RequestKind::kGenerate, 2);
  EXPECT_NO_THROW(faulty.generate("a", 4));
  EXPECT_NO_THROW(faulty.generate("b", 4));
  try {
    faulty.generate("c", 4);
    FAIL() << "expected an injected failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBackendUnreachable);
  }
  // Other kinds are unaffected.
  EXPECT_NO_THROW(faulty.embed("x"));
  faulty.clear();
  EXPECT_NO_THROW(faulty.generate("d", 4));
  EXPECT_EQ(faulty.calls(RequestKind::kGenerate), 4);
}

TEST(FaultInjectingBackend, EmbedFailuresAreEmbeddingErrors) {
  MockBackend mock;
  FaultInjectingBackend faulty(mock);
  faulty.fail_after(RequestKind::kEmbed, 0);
  try {
    faulty.embed("x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmbeddingFailure);
  }
}

namespace {

// Minimal OpenAI-compatible endpoint on an ephemeral port.
class FakeEndpoint {
 public:
  FakeEndpoint() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      const json body = json::parse(req.body);
      const std::string user = body["messages"].back()["content"];
      std::string content = "reply to: " + user;
      if (body["messages"].size() == 2 && body["messages"][0]["content"].get<std::string>().find("probability") !=
                                               std::string::npos) {
        content = user.find("everything") != std::string::npos ? "0.92" : "Probability: 0.1";
      }
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                      "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      std::vector<double> v(16, 0.0);
      v[body["input"].get<std::string>().size() % 16] = 3.0;
      v[0] += 4.0;
      res.set_content(json{{"data", {{{"embedding", v}}}}}.dump(), "application/json");
    });
    server_.Post("/broken/chat/completions", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("oops", "text/plain");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url(const std::string& base = "/v1") const {
    return "http://127.0.0.1:" + std::to_string(port_) + base;
  }
  std::string last_body_;
  std::string last_auth_;

 private:
  httplib::Server server_;
  int port_ = -1;
  std::thread thread_;
};

BackendConfig http_config(const std::string& url) {
  BackendConfig cfg;
  cfg.kind = BackendKind::kHttp;
  cfg.endpoint_url = url;
  cfg.embed_dim = 16;
  cfg.request_timeout = std::chrono::duration<double>(2.0);
  cfg.api_key_env_var = "ANCHORMEM_TEST_KEY";
  return cfg;
}

}  // namespace

TEST(HttpBackend, ChatBodyCarriesModelAndMessages) {
  HttpBackend backend(http_config("http://127.0.0.1:1/v1"));
  const json body = json::parse(backend.chat_body({RequestKind::kSummarize, "q?", std::string("[entry 1] x"), 64}));
  EXPECT_EQ(body["model"], "gpt-4o-mini");
  EXPECT_EQ(body["max_tokens"], 64);
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_NE(body["messages"][1]["content"].get<std::string>().find("[entry 1] x"), std::string::npos);
}

TEST(HttpBackend, TalksToCompatibleEndpoint) {
  FakeEndpoint endpoint;
  ::setenv("ANCHORMEM_TEST_KEY", "sk-test", 1);
  HttpBackend backend(http_config(endpoint.url()));
  EXPECT_EQ(backend.generate("hi there", 32), "reply to: hi there");
  EXPECT_EQ(endpoint.last_auth_, "Bearer sk-test");
  EXPECT_DOUBLE_EQ(backend.classify_exhaustive("summarize everything"), 0.92);
  EXPECT_DOUBLE_EQ(backend.classify_exhaustive("what is my name"), 0.1);
  const Embedding v = backend.embed("abc");
  ASSERT_EQ(v.size(), 16);
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  EXPECT_NEAR(v[0], 0.8, 1e-12);
  EXPECT_NEAR(v[3], 0.6, 1e-12);
  ::unsetenv("ANCHORMEM_TEST_KEY");
}

TEST(HttpBackend, NonOkStatusIsProtocolError) {
  FakeEndpoint endpoint;
  HttpBackend backend(http_config(endpoint.url("/broken")));
  try {
    backend.generate("x", 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBackendProtocol);
    EXPECT_TRUE(is_backend_error(e.code()));
  }
}

TEST(HttpBackend, UnreachableEndpoint) {
  // Bind then release a port so nothing is listening on it.
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  HttpBackend backend(http_config("http://127.0.0.1:" + std::to_string(port) + "/v1"));
  try {
    backend.generate("x", 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBackendUnreachable);
  }
  try {
    backend.embed("x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmbeddingFailure);
  }
}
