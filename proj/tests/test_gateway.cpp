#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "aeval/error.hpp"
#include "aeval/llm_gateway.hpp"
#include "support.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a _res macro.
#include <httplib.h>
#include <json.hpp>

using namespace aeval;
using aeval::testing::make_record;
using aeval::testing::mock_config;
using aeval::testing::TempDir;

namespace {

// Fails the first `failures` sends with a transient or permanent error.
class FlakyBackend final : public ChatBackend {
 public:
  FlakyBackend(BackendConfig c, int failures, bool transient)
      : ChatBackend(std::move(c)), failures_(failures), transient_(transient) {}
  int sends = 0;

 protected:
  std::string send(const CompletionRequest&) override {
    if (sends++ < failures_) throw TransportError("boom", 1, transient_);
    return "SCORE: 2\nREASON: ok";
  }

 private:
  int failures_;
  bool transient_;
};

// Tracks the peak number of concurrent sends.
class CountingBackend final : public ChatBackend {
 public:
  using ChatBackend::ChatBackend;
  std::atomic<int> active{0};
  std::atomic<int> peak{0};

 protected:
  std::string send(const CompletionRequest&) override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active;
    return "SCORE: 3";
  }
};

EvaluationRecord target() { return make_record("t1", TaskId::summary, "q1", 4, "Target answer"); }

}  // namespace

TEST(ParseScore, LabelledLine) {
  const auto p = parse_score("SCORE: 4\nREASON: clear and complete");
  EXPECT_EQ(p.score, 4);
  EXPECT_EQ(p.reason, "clear and complete");
}

TEST(ParseScore, ToleratesCaseAndMarkdown) {
  EXPECT_EQ(parse_score("**Score**: 5\n**Reason**: fine").score, 5);
  EXPECT_EQ(parse_score("score : 2").score, 2);
  EXPECT_EQ(parse_score("## SCORE: 3/5").score, 3);
}

TEST(ParseScore, FallsBackToFirstStandaloneInteger) {
  EXPECT_EQ(parse_score("I would rate this a 4 overall.").score, 4);
  EXPECT_EQ(parse_score("Version 2.5 of the answer earns 3").score, 3);
  EXPECT_EQ(parse_score("delta -2 but overall 5").score, 5);
  EXPECT_EQ(parse_score("item7 is weak, I give 1").score, 1);
}

TEST(ParseScore, NoScoreThrows) {
  EXPECT_THROW(parse_score("no verdict available"), ParseError);
  EXPECT_THROW(parse_score("SCORE: 7"), ParseError);
  EXPECT_THROW(parse_score("0 or 6 or 10"), ParseError);
  EXPECT_FALSE(try_parse_score("").has_value());
}

TEST(ScoringPrompt, ComponentOrder) {
  const auto ex1 = make_record("e1", TaskId::summary, "q2", 5, "Example one");
  const auto ex2 = make_record("e2", TaskId::summary, "q3", 2, "Example two");
  const std::vector<EvaluationRecord> examples = {ex1, ex2};
  const std::string p = build_scoring_prompt("Judge the summary.", target(), examples);
  const auto i_instr = p.find("Judge the summary.");
  const auto i_ex1 = p.find("### Example 1");
  const auto i_ex2 = p.find("### Example 2");
  const auto i_target = p.find("### Evaluate");
  const auto i_directive = p.find("SCORE:");
  EXPECT_EQ(i_instr, 0u);
  EXPECT_LT(i_instr, i_ex1);
  EXPECT_LT(i_ex1, i_ex2);
  EXPECT_LT(i_ex2, i_target);
  EXPECT_LT(i_target, i_directive);
  EXPECT_NE(p.find("Score: 5"), std::string::npos);
  EXPECT_NE(p.find("Answer: Target answer"), std::string::npos);
}

TEST(ScoringPrompt, RejectsCrossTaskAndUnlabeledExamples) {
  const std::vector<EvaluationRecord> other = {make_record("e", TaskId::dialogue, "q", 3)};
  EXPECT_THROW(build_scoring_prompt("x", target(), other), ValidationError);
  const std::vector<EvaluationRecord> unlabeled = {make_record("e", TaskId::summary, "q", std::nullopt)};
  EXPECT_THROW(build_scoring_prompt("x", target(), unlabeled), ValidationError);
}

TEST(MockBackend, KeyedHashIsDeterministicAndInRange) {
  MockBackend a(mock_config("alpha"));
  MockBackend b(mock_config("alpha"));
  for (int i = 0; i < 50; ++i) {
    const std::string prompt = "prompt " + std::to_string(i);
    const std::string ra = complete(a, prompt);
    EXPECT_EQ(ra, complete(b, prompt));
    const int s = parse_score(ra).score;
    EXPECT_GE(s, 1);
    EXPECT_LE(s, 5);
    EXPECT_EQ(s, MockBackend::hash_score("alpha", prompt));
  }
}

TEST(MockBackend, FixtureScoresByRecordId) {
  MockBackend m(mock_config("fx", {{"t1", 2}}));
  const auto p = score_record(m, "Judge.", target(), {});
  ASSERT_TRUE(p.predicted_score.has_value());
  EXPECT_EQ(*p.predicted_score, 2);
  EXPECT_EQ(p.backend_id, "fx");
}

TEST(ScoreRecord, ParseFailureRepromptsOnceThenMarksFailure) {
  MockBackend m(mock_config("fx", {{"t1", kFixtureParseFailure}}));
  const auto p = score_record(m, "Judge.", target(), {}, 3);
  EXPECT_TRUE(p.failed());
  EXPECT_EQ(p.instruction_version, 3);
  EXPECT_EQ(m.requests_sent(), 2u);
}

TEST(ScoreRecord, RepromptCarriesStrictDirective) {
  std::vector<CompletionRequest> seen;
  std::mutex mu;
  MockBackend m(mock_config("scripted"), [&](const CompletionRequest& r) {
    std::lock_guard lock(mu);
    seen.push_back(r);
    return seen.size() == 1 ? std::string("hmm") : MockBackend::format_reply(5, "ok");
  });
  const auto p = score_record(m, "Judge.", target(), {});
  EXPECT_EQ(p.predicted_score, 5);
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[1].reprompt, 1);
  EXPECT_NE(seen[1].prompt.find(strict_format_directive()), std::string::npos);
}

TEST(ScoreRecords, KeepsInputOrderAndRespectsMaxInFlight) {
  auto cfg = mock_config("count");
  cfg.max_in_flight = 2;
  CountingBackend b(cfg);
  std::vector<EvaluationRecord> records;
  for (int i = 0; i < 12; ++i) {
    records.push_back(make_record("r" + std::to_string(i), TaskId::summary, "q", 3));
  }
  const auto preds = score_records(b, "Judge.", records);
  ASSERT_EQ(preds.size(), records.size());
  for (std::size_t i = 0; i < preds.size(); ++i) EXPECT_EQ(preds[i].record_id, records[i].record_id);
  EXPECT_LE(b.peak.load(), 2);
}

TEST(RetryPolicy, ExponentialDelaysCapped) {
  RetryPolicy p;
  EXPECT_EQ(p.delay_after(1).count(), 250);
  EXPECT_EQ(p.delay_after(2).count(), 500);
  EXPECT_EQ(p.delay_after(3).count(), 1000);
  EXPECT_EQ(p.delay_after(20).count(), 8000);
}

TEST(ChatBackend, RetriesTransientFailuresWithBackoff) {
  FlakyBackend b(mock_config("flaky"), 2, true);
  std::vector<long long> delays;
  b.set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(d.count()); });
  EXPECT_EQ(complete(b, "x"), "SCORE: 2\nREASON: ok");
  EXPECT_EQ(b.sends, 3);
  EXPECT_EQ(delays, (std::vector<long long>{250, 500}));
}

TEST(ChatBackend, GivesUpAfterMaxAttempts) {
  FlakyBackend b(mock_config("flaky"), 10, true);
  b.set_sleeper([](std::chrono::milliseconds) {});
  try {
    complete(b, "x");
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_TRUE(e.transient());
  }
  EXPECT_EQ(b.sends, 3);
}

TEST(ChatBackend, PermanentFailureIsNotRetried) {
  FlakyBackend b(mock_config("flaky"), 1, false);
  b.set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_THROW(complete(b, "x"), TransportError);
  EXPECT_EQ(b.sends, 1);
}

TEST(ResponseCache, ServesRepeatsAndPersists) {
  TempDir dir("cache");
  const std::string path = (dir.path() / "cache.jsonl").string();
  {
    MockBackend m(mock_config("m"));
    m.attach_cache(std::make_shared<ResponseCache>(path));
    const std::string first = complete(m, "same prompt");
    EXPECT_EQ(complete(m, "same prompt"), first);
    EXPECT_EQ(m.requests_sent(), 1u);
  }
  MockBackend fresh(mock_config("m"));
  fresh.attach_cache(std::make_shared<ResponseCache>(path));
  complete(fresh, "same prompt");
  EXPECT_EQ(fresh.requests_sent(), 0u);
}

TEST(ResponseCache, KeyIncludesBackendAndMetadata) {
  auto cache = std::make_shared<ResponseCache>();
  MockBackend a(mock_config("a"));
  MockBackend b(mock_config("b"));
  a.attach_cache(cache);
  b.attach_cache(cache);
  complete(a, "p");
  complete(b, "p");
  EXPECT_EQ(b.requests_sent(), 1u);
  CompletionRequest r;
  r.prompt = "p";
  r.record_id = "other";
  a.complete(r);
  EXPECT_EQ(a.requests_sent(), 2u);
}

TEST(BackendConfig, Validation) {
  BackendConfig c = mock_config("");
  EXPECT_THROW(validate_backend_config(c), ConfigError);
  c = mock_config("x");
  c.kind = BackendKind::http_chat;
  EXPECT_THROW(validate_backend_config(c), ConfigError);
  c.endpoint = "http://localhost:1/v1/chat/completions";
  c.model_name = "m";
  c.auth_env_var = "AEVAL_TEST_KEY";
  EXPECT_NO_THROW(validate_backend_config(c));
  c.mock.fixture["r"] = 9;
  EXPECT_THROW(validate_backend_config(c), ConfigError);
}

TEST(HttpChatBackend, RequestBodyAndContentExtraction) {
  BackendConfig c = mock_config("h");
  c.model_name = "gpt-test";
  c.decoding.temperature = 0.0;
  c.decoding.max_tokens = 64;
  const auto body = nlohmann::json::parse(HttpChatBackend::build_request_body(c, "hello"));
  EXPECT_EQ(body["model"], "gpt-test");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["max_tokens"], 64);
  EXPECT_EQ(HttpChatBackend::extract_content(R"({"choices":[{"message":{"content":"SCORE: 1"}}]})"),
            "SCORE: 1");
  EXPECT_THROW(HttpChatBackend::extract_content(R"({"choices":[]})"), TransportError);
  EXPECT_THROW(HttpChatBackend::extract_content("<html>"), TransportError);
}

class HttpServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    ::setenv("AEVAL_TEST_KEY", "sekret", 1);
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  BackendConfig config() const {
    BackendConfig c;
    c.backend_id = "remote";
    c.kind = BackendKind::http_chat;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    c.model_name = "judge-model";
    c.auth_env_var = "AEVAL_TEST_KEY";
    c.timeout_seconds = 5;
    return c;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpServerTest, SendsBearerTokenAndOpenAiShape) {
  std::string auth, body;
  server_.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    body = req.body;
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"SCORE: 4\nREASON: good"}}]})",
                    "application/json");
  });
  auto backend = make_backend(config());
  const auto p = score_record(*backend, "Judge.", target(), {});
  EXPECT_EQ(p.predicted_score, 4);
  EXPECT_EQ(auth, "Bearer sekret");
  const auto j = nlohmann::json::parse(body);
  EXPECT_EQ(j["model"], "judge-model");
  EXPECT_EQ(j["temperature"], 0.0);
  EXPECT_NE(j["messages"][0]["content"].get<std::string>().find("Target answer"), std::string::npos);
}

TEST_F(HttpServerTest, ServerErrorsAreRetried) {
  std::atomic<int> calls{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = calls == 1 ? 503 : 429;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"SCORE: 1"}}]})", "application/json");
  });
  auto backend = make_backend(config());
  backend->set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_EQ(complete(*backend, "hi"), "SCORE: 1");
  EXPECT_EQ(calls.load(), 3);
}

TEST_F(HttpServerTest, ClientErrorIsPermanent) {
  std::atomic<int> calls{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
    res.set_content("bad key", "text/plain");
  });
  auto backend = make_backend(config());
  backend->set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_THROW(complete(*backend, "hi"), TransportError);
  EXPECT_EQ(calls.load(), 1);
}

TEST_F(HttpServerTest, MissingCredentialIsConfigError) {
  auto c = config();
  c.auth_env_var = "AEVAL_TEST_UNSET_VARIABLE";
  ::unsetenv("AEVAL_TEST_UNSET_VARIABLE");
  auto backend = make_backend(c);
  EXPECT_THROW(complete(*backend, "hi"), ConfigError);
}

TEST(HttpChatBackend, UnreachableEndpointExhaustsRetries) {
  ::setenv("AEVAL_TEST_KEY", "sekret", 1);
  // Bind then release a port so nothing is listening on it.
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  BackendConfig c;
  c.backend_id = "down";
  c.kind = BackendKind::http_chat;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.model_name = "m";
  c.auth_env_var = "AEVAL_TEST_KEY";
  c.timeout_seconds = 2;
  auto backend = make_backend(c);
  int sleeps = 0;
  backend->set_sleeper([&](std::chrono::milliseconds) { ++sleeps; });
  try {
    complete(*backend, "hi");
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(sleeps, 2);
}
