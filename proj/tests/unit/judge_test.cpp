#include <gtest/gtest.h>

#include <fmt/format.h>

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "feel/judge.hpp"
#include "feel/mock_judge.hpp"
#include "feel/rng.hpp"

using namespace feel;
using namespace std::chrono_literals;

namespace {

JudgeConfig mock_config(std::uint32_t retries = 3) {
    JudgeConfig c;
    c.judge_id = "mock-a";
    c.max_retries = retries;
    c.backoff_base = 100ms;
    return c;
}

JudgeClient client_for(std::shared_ptr<Backend> b, std::uint32_t retries = 3,
                       std::shared_ptr<ManualClock> clock = std::make_shared<ManualClock>()) {
    return JudgeClient(mock_config(retries), std::move(b), std::move(clock));
}

const char* kCanonical = "0 points: 0.1\n1 point: 0.2\n2 points: 0.3\n3 points: 0.4";

}  // namespace

TEST(ParseDistribution, DecimalExample) {
    const auto d = parse_distribution(kCanonical);
    EXPECT_EQ(d.probabilities(), (std::array<double, 4>{0.1, 0.2, 0.3, 0.4}));
}

TEST(ParseDistribution, Percentages) {
    const auto d = parse_distribution("0 points: 25%\n1 point: 25%\n2 points: 25%\n3 points: 25%");
    for (int j = 0; j < 4; ++j) EXPECT_EQ(d[j], 0.25);
}

TEST(ParseDistribution, RenormalizesNearOne) {
    const auto d = parse_distribution("0 points: 0.1\n1 point: 0.2\n2 points: 0.3\n3 points: 0.38");
    EXPECT_DOUBLE_EQ(d[0], 0.1 / 0.98);
    EXPECT_DOUBLE_EQ(d[3], 0.38 / 0.98);
    double sum = 0;
    for (int j = 0; j < 4; ++j) sum += d[j];
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(ParseDistribution, Errors) {
    EXPECT_THROW(parse_distribution("0 points: 0.5\n1 point: 0.5\n2 points: 0"), Error);
    EXPECT_THROW(parse_distribution("0 points: 0.5\n1 point: 0.5\n2 points: 0.5\n3 points: 0.5"), Error);
    EXPECT_THROW(parse_distribution("0 points: 150%\n1 point: 0\n2 points: 0\n3 points: 0"), Error);
    EXPECT_THROW(parse_distribution(""), Error);
}

TEST(ParseDistribution, ToleratesSurroundingProse) {
    const auto d = parse_distribution(
        "Informativeness Score:\n- **0 points**: 0.05\n- **1 point**: 0.15\n- **2 points**: 0.5\n- **3 points**: 0.3\n"
        "The supporter gives several concrete suggestions.");
    EXPECT_EQ(d[2], 0.5);
}

TEST(ParseDistribution, RenderRoundTripFuzz) {
    Rng rng(8);
    for (int trial = 0; trial < 5000; ++trial) {
        std::array<double, 4> raw{};
        double sum = 0;
        for (auto& p : raw) {
            p = rng.uniform();
            sum += p;
        }
        for (auto& p : raw) p /= sum;
        ScoreDistribution d = ScoreDistribution::normalized(raw, 0.05);
        ASSERT_EQ(parse_distribution(render_distribution(d)), d) << render_distribution(d);
    }
}

TEST(ScoreDistribution, Invariants) {
    EXPECT_THROW(ScoreDistribution({0.5, 0.5, 0.5, -0.5}), Error);
    EXPECT_THROW(ScoreDistribution({0.5, 0.5, 0.1, 0.0}), Error);
    EXPECT_NO_THROW(ScoreDistribution::point_mass(3));
    EXPECT_EQ(ScoreDistribution::uniform()[1], 0.25);
}

TEST(JudgeClient, FixedReplyOneAttempt) {
    auto b = ScriptedBackend::fixed("T");
    auto c = client_for(b);
    const auto r = c.complete("prompt");
    EXPECT_EQ(r.text, "T");
    EXPECT_EQ(r.attempts, 1u);
    EXPECT_EQ(b->call_count(), 1u);
}

TEST(JudgeClient, RetriesTransientFailures) {
    auto b = ScriptedBackend::sequence({MockAction::failing(FailureClass::transient),
                                        MockAction::failing(FailureClass::timeout), MockAction::reply("ok")});
    auto clock = std::make_shared<ManualClock>();
    auto c = client_for(b, 3, clock);
    const auto start = clock->now();
    const auto r = c.complete("p");
    EXPECT_EQ(r.text, "ok");
    EXPECT_EQ(r.attempts, 3u);
    // backoff 100ms then 200ms
    EXPECT_EQ(clock->now() - start, std::chrono::nanoseconds(300ms));
    const auto log = c.call_log();
    ASSERT_EQ(log.size(), 3u);
    EXPECT_FALSE(log[0].ok);
    EXPECT_TRUE(log[2].ok);
    EXPECT_EQ(log[2].attempt, 3u);
}

TEST(JudgeClient, NoRetriesMeansOneAttempt) {
    auto b = ScriptedBackend::sequence({MockAction::failing(FailureClass::transient)});
    auto c = client_for(b, 0);
    EXPECT_THROW(c.complete("p"), BackendError);
    EXPECT_EQ(b->call_count(), 1u);
}

TEST(JudgeClient, AuthFailureIsNotRetried) {
    auto b = ScriptedBackend::sequence({MockAction::failing(FailureClass::auth), MockAction::reply("ok")});
    auto c = client_for(b, 5);
    try {
        c.complete("p");
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.failure_class(), FailureClass::auth);
        EXPECT_EQ(e.kind(), ErrorKind::auth);
    }
    EXPECT_EQ(b->call_count(), 1u);
}

TEST(JudgeClient, RateLimitExhaustion) {
    auto b = ScriptedBackend::sequence({MockAction::failing(FailureClass::rate_limited)});
    auto c = client_for(b, 2);
    try {
        c.complete("p");
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.failure_class(), FailureClass::rate_limited);
    }
    EXPECT_EQ(b->call_count(), 3u);
}

TEST(JudgeClient, UnparseableReplyTriggersReask) {
    auto b = ScriptedBackend::sequence({MockAction::reply("I cannot decide."), MockAction::reply(kCanonical)});
    auto c = client_for(b, 3);
    const auto r = c.complete_distribution("p");
    EXPECT_EQ(r.attempts, 2u);
    EXPECT_EQ(r.distribution[3], 0.4);

    auto never = ScriptedBackend::fixed("nothing useful");
    auto c2 = client_for(never, 1);
    EXPECT_THROW(c2.complete_distribution("p"), Error);
    EXPECT_EQ(never->call_count(), 2u);
}

TEST(JudgeClient, NeverExceedsConfiguredRate) {
    auto b = ScriptedBackend::fixed("x");
    auto clock = std::make_shared<ManualClock>();
    JudgeConfig cfg = mock_config();
    cfg.rate_limit = {3, 1000ms};
    JudgeClient c(cfg, b, clock);
    for (int i = 0; i < 20; ++i) c.complete("p" + std::to_string(i));
    const auto log = c.call_log();
    ASSERT_EQ(log.size(), 20u);
    std::vector<std::string> starts;
    for (const auto& r : log) starts.push_back(r.started_at);
    // any 4 consecutive dispatches span at least one full interval
    for (std::size_t i = 3; i < starts.size(); ++i) EXPECT_LT(starts[i - 3].substr(0, 19), starts[i].substr(0, 19));
    EXPECT_GE(clock->now() - Clock::time_point{}, std::chrono::nanoseconds(6s));
}

TEST(JudgeClient, ConcurrentCallersAreLogged) {
    auto b = ScriptedBackend::fixed("x");
    auto c = client_for(b);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&c, t] {
            for (int i = 0; i < 25; ++i) c.complete(fmt::format("{}-{}", t, i));
        });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(b->call_count(), 200u);
    EXPECT_EQ(c.call_log().size(), 200u);
}

TEST(Mock, StrictScriptRejectsUnexpectedPrompt) {
    ScriptedBackend b({{"Informativeness", false, {MockAction::reply("a")}, false}}, true);
    EXPECT_EQ(b.complete("rate Informativeness"), "a");
    try {
        b.complete("what is the weather");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("what is the weather"), std::string::npos);
    }
}

TEST(Mock, FixedDistributionEveryReply) {
    auto b = ScriptedBackend::fixed(kCanonical);
    const auto first = parse_distribution(b->complete("a"));
    for (int i = 0; i < 10; ++i) EXPECT_EQ(parse_distribution(b->complete("q" + std::to_string(i))), first);
}

TEST(Mock, SeededSyntheticRepeatsExactly) {
    auto run = [](std::uint64_t seed) {
        auto b = make_mock_backend(json{{"kind", "synthetic"}, {"judge_noise", 0.3}}, seed);
        std::vector<std::string> out;
        for (int i = 0; i < 20; ++i) {
            out.push_back(b->complete("Informativeness Score:\n0 points:\n1 point:\n2 points:\n3 points:\n"
                                      "Seeker: hi\nSupporter: hello " + std::to_string(i % 4)));
        }
        return out;
    };
    EXPECT_EQ(run(7), run(7));
    EXPECT_NE(run(7), run(8));
}

TEST(Mock, DistributionWithMeanHasThatExpectation) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double m = rng.uniform(0, 3);
        const auto d = distribution_with_mean(m);
        EXPECT_NEAR(d[1] + 2 * d[2] + 3 * d[3], m, 1e-12);
    }
}

TEST(JudgeConfig, RejectsInlineCredentials) {
    EXPECT_THROW(judge_config_from_json(json{{"judge_id", "x"}, {"provider", "openai"}, {"api_key", "sk"}}), Error);
    const auto c = judge_config_from_json(json{{"judge_id", "glm-4"},
                                               {"provider", "openai"},
                                               {"endpoint", "https://example.invalid/v1/chat/completions"},
                                               {"credential_env", "GLM_API_KEY"},
                                               {"timeout_seconds", 30},
                                               {"max_retries", 2},
                                               {"rate_limit", {{"requests", 5}, {"interval_seconds", 1}}}});
    EXPECT_EQ(c.timeout, 30s);
    EXPECT_EQ(c.rate_limit.requests, 5u);
    EXPECT_EQ(judge_config_from_json(to_json(c)).credential_env, "GLM_API_KEY");
}

TEST(JudgeConfig, ValidationListsEveryProblem) {
    JudgeConfig a;
    a.judge_id = "dup";
    JudgeConfig b = a;
    JudgeConfig c;
    c.judge_id = "net";
    c.provider = "openai";
    try {
        validate_judge_configs({a, b, c});
        FAIL();
    } catch (const DiagnosticError& e) {
        EXPECT_GE(e.details().size(), 2u);
    }
}

// --- HTTP adapters against an in-process server ----------------------------

class HttpBackendTest : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            last_auth_ = req.get_header_value("Authorization");
            last_body_ = json::parse(req.body);
            if (hits_ <= fail_first_) {
                res.status = 503;
                return;
            }
            res.set_content(json{{"choices", {{{"message", {{"content", "hello"}}}}}}}.dump(), "application/json");
        });
        server_.Post("/ernie", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            last_query_token_ = req.get_param_value("access_token");
            if (req.get_param_value("access_token") == "bad") {
                res.set_content(R"({"error_code":110,"error_msg":"Access token invalid"})", "application/json");
                return;
            }
            res.set_content(R"({"result":"ernie says hi"})", "application/json");
        });
        server_.Post("/denied", [](const httplib::Request&, httplib::Response& res) { res.status = 401; });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }

    JudgeConfig config(const std::string& provider, const std::string& path, const std::string& env) {
        JudgeConfig c;
        c.judge_id = provider + "-judge";
        c.provider = provider;
        c.endpoint = fmt::format("http://127.0.0.1:{}{}", port_, path);
        c.model = "test-model";
        c.credential_env = env;
        c.timeout = 5s;
        c.backoff_base = 1ms;
        c.params = {{"temperature", 0.2}};
        return c;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    int hits_ = 0;
    int fail_first_ = 0;
    std::string last_auth_;
    std::string last_query_token_;
    json last_body_;
};

TEST_F(HttpBackendTest, OpenAiShapeAndBearerToken) {
    ::setenv("FEEL_TEST_OPENAI_KEY", "secret-1", 1);
    fail_first_ = 2;
    JudgeClient c(config("openai", "/v1/chat/completions", "FEEL_TEST_OPENAI_KEY"),
                  make_backend(config("openai", "/v1/chat/completions", "FEEL_TEST_OPENAI_KEY"), 0),
                  std::make_shared<SystemClock>());
    const auto r = c.complete("judge this");
    EXPECT_EQ(r.text, "hello");
    EXPECT_EQ(r.attempts, 3u);
    EXPECT_EQ(last_auth_, "Bearer secret-1");
    EXPECT_EQ(last_body_["model"], "test-model");
    EXPECT_EQ(last_body_["temperature"], 0.2);
    EXPECT_EQ(last_body_["messages"][0]["content"], "judge this");
}

TEST_F(HttpBackendTest, MissingCredentialIsAuthFailure) {
    ::unsetenv("FEEL_TEST_UNSET_KEY");
    auto cfg = config("openai", "/v1/chat/completions", "FEEL_TEST_UNSET_KEY");
    JudgeClient c(cfg, make_backend(cfg, 0), std::make_shared<SystemClock>());
    EXPECT_THROW(c.complete("x"), BackendError);
    EXPECT_EQ(hits_, 0);
}

TEST_F(HttpBackendTest, UnauthorizedStatusNotRetried) {
    ::setenv("FEEL_TEST_OPENAI_KEY", "k", 1);
    auto cfg = config("openai", "/denied", "FEEL_TEST_OPENAI_KEY");
    JudgeClient c(cfg, make_backend(cfg, 0), std::make_shared<SystemClock>());
    try {
        c.complete("x");
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.failure_class(), FailureClass::auth);
    }
    EXPECT_EQ(c.call_log().size(), 1u);
}

TEST_F(HttpBackendTest, ErnieTokenAndInBandErrors) {
    ::setenv("FEEL_TEST_ERNIE_KEY", "tok", 1);
    auto cfg = config("ernie", "/ernie", "FEEL_TEST_ERNIE_KEY");
    JudgeClient c(cfg, make_backend(cfg, 0), std::make_shared<SystemClock>());
    EXPECT_EQ(c.complete("x").text, "ernie says hi");
    EXPECT_EQ(last_query_token_, "tok");
    ::setenv("FEEL_TEST_ERNIE_KEY", "bad", 1);
    EXPECT_THROW(c.complete("x"), BackendError);
}

TEST(HttpBackend, UnreachableHostIsRetriedThenFails) {
    JudgeConfig c;
    c.judge_id = "down";
    c.provider = "openai";
    c.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    c.max_retries = 1;
    c.backoff_base = 1ms;
    c.timeout = 1s;
    JudgeClient client(c, make_backend(c, 0), std::make_shared<SystemClock>());
    EXPECT_THROW(client.complete("x"), BackendError);
    EXPECT_EQ(client.call_log().size(), 2u);
}
