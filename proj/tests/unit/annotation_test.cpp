#include <gtest/gtest.h>

#include <fmt/format.h>

#include <filesystem>
#include <atomic>
#include <thread>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "feel/annotation.hpp"

using namespace feel;
namespace fs = std::filesystem;

namespace {

AnnotationSession three_flag_session() {
    AnnotationSession s("s1", {"d1", "d2"}, {"ann1", "ann2", "ann3"});
    for (const auto& r : fixture::three_flag_round1()) s.record_score(r);
    return s;
}

AnnotatorScore score(const std::string& ann, const std::string& d, Aspect a, int round, double v) {
    return {ann, d, a, round, LikertScore(v), ""};
}

AnnotationSession single_key_session(std::vector<double> values) {
    std::vector<std::string> anns;
    for (std::size_t k = 0; k < values.size(); ++k) anns.push_back("a" + std::to_string(k));
    AnnotationSession s("single", {"d"}, anns);
    for (Aspect a : kAllAspects) {
        for (std::size_t k = 0; k < values.size(); ++k) {
            s.record_score(score(anns[k], "d", a, 1, a == Aspect::safety ? values[k] : 1.0));
        }
    }
    return s;
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "feel_annotation_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(RecordScore, FirstStoredSecondRejected) {
    AnnotationSession s("s", {"d"}, {"x", "y"});
    s.record_score(score("x", "d", Aspect::safety, 1, 2));
    EXPECT_NE(s.find_score("x", {"d", Aspect::safety}, 1), nullptr);
    try {
        s.record_score(score("x", "d", Aspect::safety, 1, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::conflict);
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    }
}

TEST(RecordScore, Guards) {
    AnnotationSession s("s", {"d"}, {"x"});
    EXPECT_THROW(s.record_score(score("nobody", "d", Aspect::safety, 1, 2)), Error);
    EXPECT_THROW(s.record_score(score("x", "other", Aspect::safety, 1, 2)), Error);
    try {
        s.record_score(score("x", "d", Aspect::safety, 2, 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::conflict);
    }
    EXPECT_THROW(LikertScore(3.5), Error);
    EXPECT_THROW(AnnotatorScore::from_json(
                     json{{"annotator", "x"}, {"dialogue_id", "d"}, {"aspect", "safety"}, {"score", -1}}),
                 Error);
    EXPECT_THROW(AnnotationSession("bad/id", {"d"}, {"x"}), Error);
    EXPECT_THROW(AnnotationSession("s", {"d", "d"}, {"x"}), Error);
}

TEST(RecordScore, RoundTwoOnlyForFlaggedKeys) {
    auto s = three_flag_session();
    s.advance();
    EXPECT_NO_THROW(s.record_score(score("ann1", "d1", Aspect::informativeness, 2, 2)));
    try {
        s.record_score(score("ann1", "d1", Aspect::coherence, 2, 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("not in rescoring worklist"), std::string::npos);
    }
    EXPECT_THROW(s.record_score(score("ann1", "d1", Aspect::coherence, 1, 2)), Error);
}

TEST(Discrepancy, BoundaryAndSimpleFlag) {
    EXPECT_TRUE(single_key_session({2, 2, 3}).detect_discrepancies().empty());
    const auto flags = single_key_session({1, 3, 2}).detect_discrepancies();
    ASSERT_EQ(flags.size(), 1u);
    EXPECT_EQ(flags[0].aspect, Aspect::safety);
    EXPECT_EQ(flags[0].max_gap, 2.0);
    EXPECT_EQ(flags[0].annotators, (std::vector<std::string>{"a0", "a1"}));
}

TEST(Discrepancy, IncompleteRoundOneListsMissing) {
    AnnotationSession s("s", {"d"}, {"x", "y"});
    s.record_score(score("x", "d", Aspect::safety, 1, 2));
    try {
        s.detect_discrepancies();
        FAIL();
    } catch (const DiagnosticError& e) {
        EXPECT_EQ(e.details().size(), 11u);
    }
    EXPECT_THROW(s.advance(), Error);
}

TEST(Discrepancy, MatchesAllPairsOracleAndIsPermutationInvariant) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto rows = fixture::random_round1(6, 20, seed);
        AnnotationSession s("s", [&] {
            std::vector<std::string> d;
            for (int i = 0; i < 20; ++i) d.push_back("dlg-" + std::to_string(i));
            return d;
        }(), {"ann0", "ann1", "ann2", "ann3", "ann4", "ann5"});
        AnnotationSession reversed("r", s.dialogues(), {"ann5", "ann4", "ann3", "ann2", "ann1", "ann0"});
        std::map<ScoreKey, std::vector<double>> by_key;
        for (const auto& r : rows) {
            s.record_score(r);
            reversed.record_score(r);
            by_key[{r.dialogue_id, r.aspect}].push_back(r.value.value());
        }
        std::set<ScoreKey> got;
        for (const auto& f : s.detect_discrepancies()) got.insert(f.key());
        std::set<ScoreKey> got_reversed;
        for (const auto& f : reversed.detect_discrepancies()) got_reversed.insert(f.key());
        ASSERT_EQ(got, oracle::discrepancy_keys(by_key));
        ASSERT_EQ(got, got_reversed);
    }
}

TEST(Rescoring, WorklistWithPeers) {
    auto s = three_flag_session();
    const auto flags = s.detect_discrepancies();
    ASSERT_EQ(flags.size(), 3u);
    s.open_rescoring_round(flags);
    EXPECT_EQ(s.state(), SessionState::round2);
    for (const std::string ann : {"ann1", "ann2", "ann3"}) {
        const auto items = s.worklist(ann);
        ASSERT_EQ(items.size(), 3u);
        for (const auto& item : items) {
            EXPECT_EQ(item.own_score, s.find_score(ann, {item.dialogue_id, item.aspect}, 1)->value.value());
            ASSERT_EQ(item.peers.size(), 2u);
            EXPECT_EQ(item.peers[0].label, "Annotator A");
            EXPECT_EQ(item.peers[1].label, "Annotator B");
            std::vector<double> peer_values;
            for (const auto& other : s.annotators()) {
                if (other != ann) peer_values.push_back(s.find_score(other, {item.dialogue_id, item.aspect}, 1)->value.value());
            }
            EXPECT_EQ(peer_values, (std::vector<double>{item.peers[0].value, item.peers[1].value}));
        }
    }
    EXPECT_THROW(s.worklist("stranger"), Error);
}

TEST(Rescoring, ZeroFlagsClosesDirectly) {
    auto s = single_key_session({1, 1, 2});
    EXPECT_TRUE(s.advance().empty());
    EXPECT_TRUE(s.worklist("a0").empty());
    const auto consensus = s.close();
    EXPECT_EQ(consensus.size(), 6u);
    EXPECT_EQ(s.state(), SessionState::closed);
}

TEST(Close, ConsensusMeans) {
    {
        auto s = single_key_session({2, 2, 2});
        s.advance();
        s.close();
        EXPECT_EQ(s.consensus().at({"d", Aspect::safety}), 2.0);
    }
    {
        auto s = single_key_session({1, 2, 2});
        s.advance();
        s.close();
        EXPECT_NEAR(s.consensus().at({"d", Aspect::safety}), 5.0 / 3.0, 1e-15);
    }
}

TEST(Close, RescoredKeyUsesRoundTwo) {
    auto s = single_key_session({1, 3, 2});
    s.advance();
    EXPECT_THROW(s.close(), DiagnosticError);
    s.record_score(score("a0", "d", Aspect::safety, 2, 2));
    s.record_score(score("a1", "d", Aspect::safety, 2, 3));
    try {
        s.close();
        FAIL();
    } catch (const DiagnosticError& e) {
        ASSERT_EQ(e.details().size(), 1u);
        EXPECT_EQ(e.details()[0], "a2/d/safety");
    }
    s.record_score(score("a2", "d", Aspect::safety, 2, 2));
    const auto human = s.close();
    EXPECT_NEAR(s.consensus().at({"d", Aspect::safety}), 7.0 / 3.0, 1e-12);
    for (const auto& h : human) {
        EXPECT_EQ(h.n_annotators, 3u);
        if (h.aspect == Aspect::safety) EXPECT_EQ(h.residual_gap, 1.0);
    }
    EXPECT_THROW(s.record_score(score("a2", "d", Aspect::coherence, 2, 2)), Error);
    EXPECT_THROW(s.advance(), Error);
}

TEST(Close, NotBeforeRoundTwo) {
    auto s = single_key_session({1, 1, 1});
    EXPECT_THROW(s.close(), Error);
    EXPECT_THROW(s.human_scores(), Error);
}

TEST(Replay, RebuildsIdenticalState) {
    auto s = three_flag_session();
    s.advance("t1");
    for (const auto& f : s.flags()) {
        for (const auto& a : s.annotators()) s.record_score(score(a, f.dialogue_id, f.aspect, 2, 2));
    }
    s.close("t2");
    const auto copy = AnnotationSession::replay(s.events());
    EXPECT_EQ(dump_compact(copy.to_json()), dump_compact(s.to_json()));
    EXPECT_THROW(AnnotationSession::replay({}), Error);
}

TEST(Csv, ImportAndClose) {
    const auto dir = scratch("csv");
    std::string csv = "annotator,dialogue_id,aspect,round,score\n";
    for (const auto& r : fixture::three_flag_round1()) {
        csv += fmt::format("{},{},{},1,{}\n", r.annotator_id, r.dialogue_id, aspect_name(r.aspect), r.value.value());
    }
    for (const std::string a : {"ann1", "ann2", "ann3"}) {
        csv += a + ",d1,informativeness,2,2\n" + a + ",d1,safety,2,1\n" + a + ",d2,coherence,2,2.5\n";
    }
    write_file(dir / "scores.csv", csv);
    const auto rows = load_annotation_csv(dir / "scores.csv");
    EXPECT_EQ(rows.size(), 36u + 9u);
    auto s = import_session("imported", rows, true);
    EXPECT_EQ(s.state(), SessionState::closed);
    EXPECT_EQ(s.consensus().at({"d2", Aspect::coherence}), 2.5);
    write_file(dir / "bad.csv", "ann1,d1,informativeness,1,9\nann1,d1\n");
    try {
        load_annotation_csv(dir / "bad.csv");
        FAIL();
    } catch (const DiagnosticError& e) {
        EXPECT_EQ(e.details().size(), 2u);
    }
}

TEST(Store, PersistsAndReplaysAfterRestart) {
    const auto dir = scratch("store");
    std::string before;
    {
        SessionStore store(dir);
        store.create("s1", {"d1", "d2"}, {"ann1", "ann2", "ann3"}, "t0");
        for (const auto& r : fixture::three_flag_round1()) {
            store.mutate("s1", [&](AnnotationSession& s) { s.record_score(r); });
        }
        EXPECT_THROW(store.mutate("s1", [&](AnnotationSession& s) { s.record_score(fixture::three_flag_round1()[0]); }),
                     Error);
        store.mutate("s1", [](AnnotationSession& s) { return s.advance("t1"); });
        before = store.read("s1", [](const AnnotationSession& s) { return dump_compact(s.to_json()); });
        EXPECT_THROW(store.create("s1", {"d"}, {"a"}, ""), Error);
        EXPECT_EQ(store.create("", {"d"}, {"a"}, "")["session_id"], "session-2");
    }
    SessionStore reopened(dir);
    EXPECT_EQ(reopened.ids().size(), 2u);
    EXPECT_EQ(reopened.read("s1", [](const AnnotationSession& s) { return dump_compact(s.to_json()); }), before);
    EXPECT_THROW(reopened.read("nope", [](const AnnotationSession&) { return 0; }), Error);
}

TEST(Store, ConcurrentWritersSerialized) {
    SessionStore store;
    std::vector<std::string> dialogues;
    for (int i = 0; i < 10; ++i) dialogues.push_back("d" + std::to_string(i));
    store.create("c", dialogues, {"a", "b", "c", "d"}, "");
    std::vector<std::thread> threads;
    std::atomic<int> conflicts{0};
    for (const std::string ann : {"a", "b", "c", "d"}) {
        for (int copy = 0; copy < 2; ++copy) {
            threads.emplace_back([&, ann] {
                for (const auto& d : dialogues) {
                    for (Aspect a : kAllAspects) {
                        try {
                            store.mutate("c", [&](AnnotationSession& s) { s.record_score(score(ann, d, a, 1, 1)); });
                        } catch (const Error&) {
                            ++conflicts;
                        }
                    }
                }
            });
        }
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(conflicts.load(), 4 * 60);
    EXPECT_TRUE(store.read("c", [](const AnnotationSession& s) { return s.missing_round1(); }).empty());
}
