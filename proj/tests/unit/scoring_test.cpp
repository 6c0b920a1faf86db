#include <gtest/gtest.h>

#include "feel/mock_judge.hpp"
#include "feel/rng.hpp"
#include "feel/scoring.hpp"

using namespace feel;

namespace {

const char* kCot = "1. Read the dialogue.\n2. Judge the aspect.";

Dialogue dialogue(const std::string& id = "d1") {
    return {id, Source::esconv, std::nullopt,
            {{Role::seeker, "I can't sleep before exams."}, {Role::supporter, "That sounds exhausting."}}};
}

JudgeClient client(std::shared_ptr<Backend> b, std::uint32_t retries = 0) {
    JudgeConfig cfg;
    cfg.judge_id = "mock-a";
    cfg.max_retries = retries;
    return JudgeClient(cfg, std::move(b), std::make_shared<ManualClock>());
}

CotSteps cot(Aspect a) { return {a, "mock-a", PromptTemplate::builtin().version(), {"Read.", "Judge."}}; }

std::string render(std::array<double, 4> p) { return render_distribution(ScoreDistribution(p)); }

ScoringConfig rounds(std::size_t r, std::size_t min) {
    ScoringConfig c;
    c.rounds = r;
    c.min_rounds = min;
    return c;
}

}  // namespace

TEST(ExpectedScore, Examples) {
    EXPECT_EQ(expected_score(ScoreDistribution({1, 0, 0, 0})), 0.0);
    EXPECT_EQ(expected_score(ScoreDistribution::uniform()), 1.5);
    EXPECT_NEAR(expected_score(ScoreDistribution({0.1, 0.2, 0.3, 0.4})), 2.0, 1e-15);
}

TEST(ExpectedScore, MonotoneUnderUpwardMassShift) {
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        std::array<double, 4> p{};
        double s = 0;
        for (auto& x : p) s += (x = rng.uniform());
        for (auto& x : p) x /= s;
        const auto j = rng.below(3);
        const auto k = j + 1 + rng.below(3 - j);
        const double delta = p[j] * rng.uniform();
        auto q = p;
        q[j] -= delta;
        q[k] += delta;
        const auto before = expected_score(ScoreDistribution::normalized(p, 0.05));
        const auto after = expected_score(ScoreDistribution::normalized(q, 0.05));
        EXPECT_GE(after, before - 1e-12);
        EXPECT_GE(before, 0.0);
        EXPECT_LE(before, 3.0);
    }
}

TEST(EvaluateAspect, ConstantTopBand) {
    auto judge = client(ScriptedBackend::fixed(render({0, 0, 0, 1})));
    const auto s = evaluate_aspect(judge, PromptTemplate::builtin(), cot(Aspect::safety), dialogue(), Aspect::safety,
                                   rounds(10, 5));
    EXPECT_EQ(s.value.value(), 3.0);
    EXPECT_EQ(s.rounds_used, 10u);
    EXPECT_EQ(s.rounds.size(), 10u);
}

TEST(EvaluateAspect, AlternatingExtremesAverage) {
    auto b = std::make_shared<ScriptedBackend>(
        std::vector<MockRule>{{"", false, {MockAction::reply(render({1, 0, 0, 0})), MockAction::reply(render({0, 0, 0, 1}))}, true}},
        true);
    auto judge = client(b);
    const auto s = evaluate_aspect(judge, PromptTemplate::builtin(), cot(Aspect::coherence), dialogue(),
                                   Aspect::coherence, rounds(10, 5));
    EXPECT_EQ(s.value.value(), 1.5);
}

TEST(EvaluateAspect, TooManyFailuresIsMissing) {
    std::vector<MockAction> actions;
    for (int i = 0; i < 6; ++i) actions.push_back(MockAction::failing(FailureClass::transient));
    for (int i = 0; i < 4; ++i) actions.push_back(MockAction::reply(render({0, 1, 0, 0})));
    auto judge = client(std::make_shared<ScriptedBackend>(std::vector<MockRule>{{"", false, actions, true}}, true));
    try {
        evaluate_aspect(judge, PromptTemplate::builtin(), cot(Aspect::safety), dialogue(), Aspect::safety,
                        rounds(10, 5));
        FAIL();
    } catch (const MissingScoreError& e) {
        EXPECT_EQ(e.rounds().size(), 10u);
        EXPECT_EQ(e.aspect(), Aspect::safety);
        std::size_t failed = 0;
        for (const auto& r : e.rounds()) {
            if (r.status == RoundStatus::failed) {
                ++failed;
                EXPECT_FALSE(r.distribution.has_value());
            }
        }
        EXPECT_EQ(failed, 6u);
    }
}

TEST(EvaluateAspect, FailedRoundsExcludedFromMean) {
    std::vector<MockAction> actions{MockAction::reply(render({0, 0, 1, 0})), MockAction::reply("garbled"),
                                    MockAction::reply(render({0, 0, 0, 1}))};
    auto judge = client(std::make_shared<ScriptedBackend>(std::vector<MockRule>{{"", false, actions, false}}, true));
    const auto s = evaluate_aspect(judge, PromptTemplate::builtin(), cot(Aspect::safety), dialogue(), Aspect::safety,
                                   rounds(3, 2));
    EXPECT_EQ(s.rounds_used, 2u);
    EXPECT_EQ(s.value.value(), 2.5);
    EXPECT_EQ(s.rounds[1].status, RoundStatus::failed);
    EXPECT_EQ(mean_of_ok_rounds(s.rounds), s.value.value());
}

TEST(EvaluateDialogue, DistinctFixedPerAspect) {
    std::vector<MockRule> rules;
    std::map<Aspect, double> expected;
    const std::array<std::array<double, 4>, 6> dists{{{1, 0, 0, 0},
                                                      {0.5, 0.5, 0, 0},
                                                      {0, 1, 0, 0},
                                                      {0, 0.5, 0.5, 0},
                                                      {0, 0, 1, 0},
                                                      {0.1, 0.2, 0.3, 0.4}}};
    for (Aspect a : kAllAspects) {
        const auto& p = dists[index_of(a)];
        rules.push_back({std::string(aspect_title(a)) + " Score:", false, {MockAction::reply(render(p))}, false});
        expected[a] = 0 * p[0] + 1 * p[1] + 2 * p[2] + 3 * p[3];
    }
    auto judge = client(std::make_shared<ScriptedBackend>(rules, false, MockAction::reply(kCot)));
    CotCache cache;
    const auto r = evaluate_dialogue(judge, PromptTemplate::builtin(), cache, dialogue(), rounds(4, 2));
    ASSERT_TRUE(r.complete());
    for (Aspect a : kAllAspects) EXPECT_NEAR(r.value(a), expected[a], 1e-12) << aspect_name(a);
    EXPECT_EQ(cache.size(), 6u);
}

TEST(EvaluateDialogue, UniformEverywhere) {
    auto judge = client(std::make_shared<ScriptedBackend>(
        std::vector<MockRule>{{"Dialogue:\n", false, {MockAction::reply(render({0.25, 0.25, 0.25, 0.25}))}, false}},
        false, MockAction::reply(kCot)));
    CotCache cache;
    const auto r = evaluate_dialogue(judge, PromptTemplate::builtin(), cache, dialogue(), rounds(3, 1));
    for (Aspect a : kAllAspects) EXPECT_EQ(r.value(a), 1.5);
}

TEST(EvaluateDialogue, OneAspectFailingIsRecordedMissing) {
    std::vector<MockRule> rules{
        {"Safety Score:", false, {MockAction::failing(FailureClass::transient)}, false},
        {"Dialogue:\n", false, {MockAction::reply(render({0, 0, 1, 0}))}, false},
    };
    auto judge = client(std::make_shared<ScriptedBackend>(rules, false, MockAction::reply(kCot)));
    CotCache cache;
    const auto r = evaluate_dialogue(judge, PromptTemplate::builtin(), cache, dialogue(), rounds(3, 2));
    EXPECT_EQ(r.scores.size(), 5u);
    ASSERT_EQ(r.missing.size(), 1u);
    EXPECT_TRUE(r.missing.count(Aspect::safety));
    EXPECT_EQ(r.missing.at(Aspect::safety).rounds.size(), 3u);
    EXPECT_THROW(r.value(Aspect::safety), Error);
}

TEST(EvaluateDialogue, AuthFailurePropagates) {
    auto judge = client(ScriptedBackend::sequence({MockAction::failing(FailureClass::auth)}));
    CotCache cache;
    EXPECT_THROW(evaluate_dialogue(judge, PromptTemplate::builtin(), cache, dialogue(), rounds(3, 2)), BackendError);
}

TEST(EvaluationResult, JsonRoundTripIsRecomputable) {
    auto judge = client(make_mock_backend(json{{"kind", "synthetic"}, {"judge_noise", 0.4}}, 9));
    CotCache cache;
    const auto r = evaluate_dialogue(judge, PromptTemplate::builtin(), cache, dialogue(), rounds(7, 5));
    const auto line = dump_compact(r.to_json());
    const auto back = EvaluationResult::from_json(json::parse(line));
    EXPECT_EQ(dump_compact(back.to_json()), line);
    for (Aspect a : kAllAspects) {
        const auto& s = back.scores.at(a);
        EXPECT_NEAR(mean_of_ok_rounds(s.rounds), s.value.value(), 1e-12);
        EXPECT_GE(s.value.value(), 0.0);
        EXPECT_LE(s.value.value(), 3.0);
    }
}

TEST(ScoringConfig, Validation) {
    ScoringConfig c;
    c.rounds = 0;
    EXPECT_THROW(c.validate(), Error);
    c.rounds = 3;
    c.min_rounds = 4;
    EXPECT_THROW(c.validate(), Error);
}
