#include <gtest/gtest.h>

#include <filesystem>

#include "feel/mock_judge.hpp"
#include "feel/prompting.hpp"

using namespace feel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "feel_prompting_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Dialogue two_turns() {
    return {"d1", Source::esconv, std::string("work"),
            {{Role::seeker, "I failed my exam.\nI feel awful."}, {Role::supporter, "I'm sorry, that is hard."}}};
}

CotSteps steps_for(Aspect a, const std::string& version = PromptTemplate::builtin().version()) {
    return {a, "mock-a", version, {"Read the dialogue.", "Score it."}};
}

JudgeClient mock_client(std::shared_ptr<Backend> b) {
    JudgeConfig cfg;
    cfg.judge_id = "mock-a";
    cfg.max_retries = 0;
    return JudgeClient(cfg, std::move(b), std::make_shared<ManualClock>());
}

const char* kPaperCot =
    "1. Read the client's description carefully.\n"
    "2. Extract the emotional issues and related details in the description.";

}  // namespace

TEST(Template, BuiltinIsValid) {
    const auto& t = PromptTemplate::builtin();
    EXPECT_EQ(t.version(), "feel-v1");
    for (Aspect a : kAllAspects) EXPECT_FALSE(t.criterion(a).empty());
    for (const char* label : {"0 points:", "1 point:", "2 points:", "3 points:"}) {
        EXPECT_NE(t.output_format().find(label), std::string::npos);
    }
}

TEST(Template, CreateRejectsBlankTexts) {
    const auto& b = PromptTemplate::builtin();
    std::map<Aspect, std::string> crit;
    for (Aspect a : kAllAspects) crit[a] = b.criterion(a);
    EXPECT_THROW(PromptTemplate::create("v", "", crit, b.output_format(), b.cot_request_suffix()), Error);
    auto missing = crit;
    missing.erase(Aspect::safety);
    EXPECT_THROW(PromptTemplate::create("v", b.task_spec(), missing, b.output_format(), b.cot_request_suffix()),
                 Error);
    EXPECT_THROW(PromptTemplate::create("v", b.task_spec(), crit, "Score: ?", b.cot_request_suffix()), Error);
}

TEST(Template, SaveLoadAndChecksum) {
    const auto root = scratch("templates");
    PromptTemplate::builtin().save(root);
    const auto loaded = PromptTemplate::load(root, "feel-v1");
    EXPECT_EQ(loaded.fingerprint(), PromptTemplate::builtin().fingerprint());
    write_file(root / "feel-v1" / "task.txt", "edited in place");
    EXPECT_THROW(PromptTemplate::load(root, "feel-v1"), Error);
    EXPECT_THROW(PromptTemplate::load(root, "nope"), Error);
}

TEST(CotRequest, ContainsCriterionAndTrailer) {
    const auto& t = PromptTemplate::builtin();
    const auto r = build_cot_request(t, Aspect::informativeness);
    EXPECT_NE(r.find(t.criterion(Aspect::informativeness)), std::string::npos);
    EXPECT_TRUE(r.ends_with("Evaluation Steps:"));
}

TEST(CotRequest, AspectsDifferOnlyInCriterionBlock) {
    const auto& t = PromptTemplate::builtin();
    auto a = build_cot_request(t, Aspect::informativeness);
    auto b = build_cot_request(t, Aspect::safety);
    const std::string block_a = std::string(aspect_title(Aspect::informativeness)) + ": " +
                                t.criterion(Aspect::informativeness);
    const std::string block_b = std::string(aspect_title(Aspect::safety)) + ": " + t.criterion(Aspect::safety);
    const auto pa = a.find(block_a);
    const auto pb = b.find(block_b);
    ASSERT_NE(pa, std::string::npos);
    ASSERT_NE(pb, std::string::npos);
    EXPECT_EQ(a.substr(0, pa), b.substr(0, pb));
    EXPECT_EQ(a.substr(pa + block_a.size()), b.substr(pb + block_b.size()));
}

TEST(CotParse, SampleListing) {
    const auto steps = parse_cot_response(kPaperCot);
    ASSERT_EQ(steps.size(), 2u);
    EXPECT_EQ(steps[0], "Read the client's description carefully.");
    EXPECT_EQ(steps[1], "Extract the emotional issues and related details in the description.");
}

TEST(CotParse, ParagraphHasNoSteps) {
    try {
        parse_cot_response("Just read everything and judge it fairly, considering all context.");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no enumerable steps"), std::string::npos);
    }
}

TEST(CotParse, SevenStepsWithBlankLines) {
    std::string raw = "Evaluation Steps:\n\n";
    for (int i = 1; i <= 7; ++i) raw += std::to_string(i) + ". Step number " + std::to_string(i) + ".\n\n";
    const auto steps = parse_cot_response(raw);
    ASSERT_EQ(steps.size(), 7u);
    EXPECT_EQ(steps[6], "Step number 7.");
}

TEST(CotParse, BulletsContinuationsAndFiller) {
    const auto steps = parse_cot_response("- first step\n  continues here\n* second\n...\n\xE2\x80\xA2 third");
    ASSERT_EQ(steps.size(), 3u);
    EXPECT_EQ(steps[0], "first step continues here");
    EXPECT_EQ(steps[2], "third");
}

TEST(EvaluationPrompt, OrderAndBandLabels) {
    const auto& t = PromptTemplate::builtin();
    const auto p = build_evaluation_prompt(t, Aspect::helpfulness, steps_for(Aspect::helpfulness), two_turns());
    for (const char* label : {"0 points:", "1 point:", "2 points:", "3 points:"}) {
        EXPECT_NE(p.find(label), std::string::npos);
    }
    const auto task = p.find(t.task_spec());
    const auto crit = p.find(t.criterion(Aspect::helpfulness));
    const auto steps = p.find("Evaluation Steps:");
    const auto dialogue = p.find("Seeker: I failed my exam. I feel awful.");
    const auto format = p.find("3 points:");
    EXPECT_LT(task, crit);
    EXPECT_LT(crit, steps);
    EXPECT_LT(steps, dialogue);
    EXPECT_LT(dialogue, format);
    EXPECT_NE(p.find("Helpfulness Score:"), std::string::npos);
    EXPECT_EQ(p.find("Topic: work"), std::string::npos);
    PromptOptions with_topic{true};
    EXPECT_NE(build_evaluation_prompt(t, Aspect::helpfulness, steps_for(Aspect::helpfulness), two_turns(), with_topic)
                  .find("Topic: work"),
              std::string::npos);
}

TEST(EvaluationPrompt, TranscriptHasOneLinePerTurn) {
    const auto text = render_transcript(two_turns());
    EXPECT_EQ(text, "Seeker: I failed my exam. I feel awful.\nSupporter: I'm sorry, that is hard.");
}

TEST(EvaluationPrompt, PureAndGuarded) {
    const auto& t = PromptTemplate::builtin();
    const auto cot = steps_for(Aspect::coherence);
    EXPECT_EQ(build_evaluation_prompt(t, Aspect::coherence, cot, two_turns()),
              build_evaluation_prompt(t, Aspect::coherence, cot, two_turns()));
    EXPECT_THROW(build_evaluation_prompt(t, Aspect::coherence, steps_for(Aspect::coherence, "old"), two_turns()),
                 Error);
    EXPECT_THROW(build_evaluation_prompt(t, Aspect::safety, cot, two_turns()), Error);
}

TEST(CotCache, WarmCacheIssuesNoCall) {
    CotCache cache;
    auto backend = ScriptedBackend::fixed(kPaperCot);
    auto judge = mock_client(backend);
    const auto& t = PromptTemplate::builtin();
    const auto first = get_or_generate_cot(cache, judge, t, Aspect::safety);
    EXPECT_EQ(backend->call_count(), 1u);
    const auto second = get_or_generate_cot(cache, judge, t, Aspect::safety);
    EXPECT_EQ(backend->call_count(), 1u);
    EXPECT_EQ(first.steps, second.steps);
    get_or_generate_cot(cache, judge, t, Aspect::coherence);
    EXPECT_EQ(backend->call_count(), 2u);
    get_or_generate_cot(cache, judge, t, Aspect::safety, true);
    EXPECT_EQ(backend->call_count(), 3u);
}

TEST(CotCache, PersistsToFileAndReloads) {
    const auto dir = scratch("cache");
    const auto file = dir / "cot.jsonl";
    {
        CotCache cache(file);
        auto judge = mock_client(ScriptedBackend::fixed(kPaperCot));
        get_or_generate_cot(cache, judge, PromptTemplate::builtin(), Aspect::informativeness);
    }
    ASSERT_TRUE(fs::exists(file));
    const auto line = json::parse(read_file(file));
    EXPECT_EQ(line["judge"], "mock-a");
    EXPECT_EQ(line["aspect"], "informativeness");
    EXPECT_EQ(line["steps"].size(), 2u);
    CotCache reloaded(file);
    EXPECT_TRUE(reloaded.find("mock-a", Aspect::informativeness, "feel-v1").has_value());
    EXPECT_FALSE(reloaded.find("mock-b", Aspect::informativeness, "feel-v1").has_value());
    EXPECT_FALSE(reloaded.find("mock-a", Aspect::informativeness, "feel-v2").has_value());
}

TEST(CotCache, ColdCacheUnreachableJudgePropagates) {
    CotCache cache;
    auto judge = mock_client(ScriptedBackend::sequence({MockAction::failing(FailureClass::transient)}));
    EXPECT_THROW(get_or_generate_cot(cache, judge, PromptTemplate::builtin(), Aspect::safety), BackendError);
    EXPECT_EQ(cache.size(), 0u);
}
