#include <gtest/gtest.h>

#include <fmt/format.h>
#include <httplib.h>

#include <filesystem>
#include <thread>

#include "../support/fixtures.hpp"
#include "feel/service.hpp"

using namespace feel;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = fs::path(FEEL_SOURCE_DIR) / "fixtures";

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "feel_service_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Service on an ephemeral port, served from a background thread.
class Running {
public:
    explicit Running(ServiceOptions o) : service_(std::make_unique<Service>(std::move(o))) {
        port_ = service_->bind_any_port("127.0.0.1");
        thread_ = std::thread([this] { service_->listen(); });
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        for (int i = 0; i < 200 && !client_->Get("/openapi.json"); ++i) {
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    }
    ~Running() {
        service_->stop();
        thread_.join();
    }

    Service& service() { return *service_; }
    httplib::Client& client() { return *client_; }

    std::pair<int, json> get(const std::string& path) {
        auto r = client_->Get(path, headers_);
        return {r->status, json::parse(r->body)};
    }
    std::pair<int, json> post(const std::string& path, const json& body = json::object()) {
        auto r = client_->Post(path, headers_, body.dump(), "application/json");
        return {r->status, json::parse(r->body)};
    }
    void set_token(const std::string& token) { headers_ = {{"Authorization", "Bearer " + token}}; }

    json wait_job(const std::string& id) {
        service_->jobs().wait(id, std::chrono::seconds(60));
        return get("/jobs/" + id).second;
    }

private:
    std::unique_ptr<Service> service_;
    int port_ = 0;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
    httplib::Headers headers_;
};

ServiceOptions options_for(const fs::path& dir) {
    ServiceOptions o;
    o.data_dir = dir;
    o.workers = 2;
    return o;
}

json three_flag_session(Running& s) {
    auto [status, created] =
        s.post("/sessions", {{"session_id", "s1"}, {"dialogues", {"d1", "d2"}}, {"annotators", {"ann1", "ann2", "ann3"}}});
    EXPECT_EQ(status, 201);
    for (const auto& sc : fixture::three_flag_round1()) {
        auto body = sc.to_json();
        body.erase("timestamp");
        EXPECT_EQ(s.post("/sessions/s1/scores", body).first, 201);
    }
    return created;
}

}  // namespace

TEST(ServiceStatus, ErrorKindsMapToHttp) {
    EXPECT_EQ(http_status(ErrorKind::invalid_argument), 400);
    EXPECT_EQ(http_status(ErrorKind::parse), 400);
    EXPECT_EQ(http_status(ErrorKind::not_found), 404);
    EXPECT_EQ(http_status(ErrorKind::conflict), 409);
    EXPECT_EQ(http_status(ErrorKind::unauthorized), 401);
}

TEST(ServiceBindAddr, Parses) {
    EXPECT_EQ(parse_bind_addr(""), std::make_pair(std::string("127.0.0.1"), 8080));
    EXPECT_EQ(parse_bind_addr("0.0.0.0:9000"), std::make_pair(std::string("0.0.0.0"), 9000));
    EXPECT_EQ(parse_bind_addr(":81"), std::make_pair(std::string("127.0.0.1"), 81));
    EXPECT_THROW(parse_bind_addr("host:http"), Error);
}

TEST(ServiceSessions, DuplicateScoreIs409WithModuleError) {
    Running s(options_for(fresh_dir("dup")));
    three_flag_session(s);
    const auto first = fixture::three_flag_round1().front();
    auto [status, body] = s.post("/sessions/s1/scores", first.to_json());
    EXPECT_EQ(status, 409);
    // same error the module raises for the same call
    const auto expected = s.service().sessions().read("s1", [&](const AnnotationSession& session) {
        AnnotationSession copy = session;
        try {
            copy.record_score(first);
        } catch (const std::exception& e) {
            return error_body(e);
        }
        return json();
    });
    EXPECT_EQ(body, expected);
    EXPECT_NE(body["error"]["message"].get<std::string>().find("duplicate"), std::string::npos);
}

TEST(ServiceSessions, WorklistAfterAdvanceHasThreeItems) {
    Running s(options_for(fresh_dir("worklist")));
    three_flag_session(s);
    auto [status, flags] = s.post("/sessions/s1/advance");
    ASSERT_EQ(status, 200);
    EXPECT_EQ(flags.size(), 3u);
    for (const std::string ann : {"ann1", "ann2", "ann3"}) {
        auto [st, items] = s.get("/sessions/s1/worklist/" + ann);
        EXPECT_EQ(st, 200);
        EXPECT_EQ(items.size(), 3u);
        const auto module = s.service().sessions().read("s1", [&](const AnnotationSession& session) {
            json arr = json::array();
            for (const auto& w : session.worklist(ann)) arr.push_back(w.to_json());
            return arr;
        });
        EXPECT_EQ(items, module);
    }
}

TEST(ServiceSessions, SessionBodyEqualsReplayedModuleState) {
    const auto dir = fresh_dir("contract");
    Running s(options_for(dir));
    three_flag_session(s);
    s.post("/sessions/s1/advance");
    auto [status, body] = s.get("/sessions/s1");
    ASSERT_EQ(status, 200);
    const auto events = s.service().sessions().read("s1", [](const AnnotationSession& a) { return a.events(); });
    EXPECT_EQ(body, AnnotationSession::replay(events).to_json());
    EXPECT_EQ(body["state"], "round2");
}

TEST(ServiceSessions, FullWorkflowClosesWithConsensus) {
    Running s(options_for(fresh_dir("workflow")));
    three_flag_session(s);
    s.post("/sessions/s1/advance");
    EXPECT_EQ(s.post("/sessions/s1/close").first, 409);  // worklist unresolved
    auto [status, items] = s.get("/sessions/s1/worklist/ann1");
    for (const std::string ann : {"ann1", "ann2", "ann3"}) {
        for (const auto& item : items) {
            auto [st, _] = s.post("/sessions/s1/scores", {{"annotator", ann},
                                                          {"dialogue_id", item["dialogue_id"]},
                                                          {"aspect", item["aspect"]},
                                                          {"round", 2},
                                                          {"score", 2.0}});
            EXPECT_EQ(st, 201);
        }
    }
    auto [st2, rejected] = s.post("/sessions/s1/scores", {{"annotator", "ann1"},
                                                          {"dialogue_id", "d2"},
                                                          {"aspect", "helpfulness"},
                                                          {"round", 2},
                                                          {"score", 2.0}});
    EXPECT_EQ(st2, 409);
    EXPECT_NE(rejected["error"]["message"].get<std::string>().find("not in rescoring worklist"), std::string::npos);
    auto [st3, human] = s.post("/sessions/s1/close");
    ASSERT_EQ(st3, 200);
    EXPECT_EQ(human.size(), 12u);
    EXPECT_EQ(s.get("/sessions/s1").second["state"], "closed");
}

TEST(ServiceSessions, ValidationAndNotFound) {
    Running s(options_for(fresh_dir("errors")));
    EXPECT_EQ(s.post("/sessions", {{"dialogues", {"d1"}}}).first, 400);
    EXPECT_EQ(s.get("/sessions/nope").first, 404);
    EXPECT_EQ(s.get("/jobs/job-999").first, 404);
    three_flag_session(s);
    EXPECT_EQ(s.get("/sessions/s1/worklist/stranger").first, 404);
    EXPECT_EQ(s.post("/sessions/s1/scores", {{"annotator", "ann1"}, {"dialogue_id", "d1"}, {"aspect", "safety"},
                                             {"round", 1}, {"score", 3.5}})
                  .first,
              400);
    EXPECT_EQ(s.post("/sessions", {{"session_id", "s1"}, {"dialogues", {"d"}}, {"annotators", {"a"}}}).first, 409);
    auto r = s.client().Post("/sessions", "{not json", "application/json");
    EXPECT_EQ(r->status, 400);
}

TEST(ServiceSessions, IncompleteRoundOneCannotAdvance) {
    Running s(options_for(fresh_dir("incomplete")));
    s.post("/sessions", {{"session_id", "s2"}, {"dialogues", {"d1"}}, {"annotators", {"a", "b"}}});
    auto [status, body] = s.post("/sessions/s2/advance");
    EXPECT_EQ(status, 409);
    EXPECT_EQ(body["error"]["details"].size(), 12u);
}

TEST(ServiceSessions, RestartReplaysEventLog) {
    const auto dir = fresh_dir("restart");
    json before;
    {
        Running s(options_for(dir));
        three_flag_session(s);
        s.post("/sessions/s1/advance");
        s.post("/sessions/s1/scores",
               {{"annotator", "ann2"}, {"dialogue_id", "d1"}, {"aspect", "safety"}, {"round", 2}, {"score", 1.0}});
        before = s.get("/sessions/s1").second;
    }
    Running again(options_for(dir));
    EXPECT_EQ(again.get("/sessions/s1").second, before);
    EXPECT_EQ(again.get("/sessions").second, json::array({"s1"}));
}

TEST(ServiceAuth, TokenRequiredWhenConfigured) {
    auto o = options_for(fresh_dir("auth"));
    o.auth_token = "s3cret";
    Running s(o);
    auto [status, body] = s.get("/sessions");
    EXPECT_EQ(status, 401);
    EXPECT_EQ(body["error"]["kind"], "unauthorized");
    s.set_token("wrong");
    EXPECT_EQ(s.get("/sessions").first, 401);
    s.set_token("s3cret");
    EXPECT_EQ(s.get("/sessions").first, 200);
}

TEST(ServiceOpenApi, ListsEveryRoute) {
    Running s(options_for(fresh_dir("openapi")));
    auto [status, doc] = s.get("/openapi.json");
    ASSERT_EQ(status, 200);
    EXPECT_EQ(doc, s.service().openapi());
    const auto& paths = doc["paths"];
    for (const auto& [path, method] :
         std::vector<std::pair<std::string, std::string>>{{"/sessions", "post"},
                                                          {"/sessions/{id}", "get"},
                                                          {"/sessions/{id}/scores", "post"},
                                                          {"/sessions/{id}/advance", "post"},
                                                          {"/sessions/{id}/close", "post"},
                                                          {"/sessions/{id}/worklist/{annotator}", "get"},
                                                          {"/jobs/evaluate", "post"},
                                                          {"/jobs/train-weights", "post"},
                                                          {"/jobs/rank", "post"},
                                                          {"/jobs/baselines", "post"},
                                                          {"/jobs/{id}", "get"},
                                                          {"/dialogues/{id}", "get"}}) {
        EXPECT_TRUE(paths.contains(path) && paths[path].contains(method)) << method << " " << path;
    }
    EXPECT_EQ(paths["/sessions/{id}/worklist/{annotator}"]["get"]["parameters"].size(), 2u);
}

TEST(ServiceDialogues, ServesCorpusRecords) {
    const auto dir = fresh_dir("dialogues");
    fs::copy_file(kFixtures / "ten.jsonl", dir / "corpus.jsonl");
    Running s(options_for(dir));
    auto [status, body] = s.get("/dialogues/esc-004");
    ASSERT_EQ(status, 200);
    const auto corpus = load_corpus(kFixtures / "ten.jsonl", CorpusFormat::jsonl);
    EXPECT_EQ(body, to_json(*find_dialogue(corpus, "esc-004")));
    EXPECT_EQ(s.get("/dialogues/esc-999").first, 404);
}

TEST(ServiceJobs, EvaluateJobResolvesToPersistedResults) {
    const auto dir = fresh_dir("jobs");
    fs::copy_file(kFixtures / "ten.jsonl", dir / "ten.jsonl");
    Running s(options_for(dir));
    auto [status, queued] = s.post("/jobs/evaluate", {{"corpus", "ten.jsonl"}, {"judges", {"mock"}}, {"rounds", 2}, {"seed", 3}});
    ASSERT_EQ(status, 202);
    EXPECT_EQ(queued["kind"], "evaluate");
    const auto job = s.wait_job(queued["job_id"]);
    ASSERT_EQ(job["status"], "done") << job.dump();
    EXPECT_EQ(job["progress"]["done"], 30);
    for (const std::string judge : {"mock-a", "mock-b", "mock-c"}) {
        const auto file = dir / job["result"]["files"][judge].get<std::string>();
        EXPECT_EQ(load_evaluations(file).size(), 10u);
    }
    EXPECT_TRUE(fs::exists(dir / job["result"]["dir"].get<std::string>() / "manifest.json"));

    // chain: train-weights, then rank
    fs::copy_file(kFixtures / "human.jsonl", dir / "human.jsonl");
    auto [st2, train] = s.post("/jobs/train-weights", {{"judges", {"mock-a", "mock-b", "mock-c"}},
                                                       {"scores", job["result"]["dir"]},
                                                       {"human", "human.jsonl"}});
    ASSERT_EQ(st2, 202);
    const auto trained = s.wait_job(train["job_id"]);
    ASSERT_EQ(trained["status"], "done") << trained.dump();
    const auto weights = EnsembleWeights::load(dir / trained["result"]["file"].get<std::string>());
    EXPECT_EQ(weights.to_json(), trained["result"]["weights"]);

    auto [st3, rank] = s.post("/jobs/rank", {{"predictions", job["result"]["files"]["mock-a"]}, {"human", "human.jsonl"}});
    ASSERT_EQ(st3, 202);
    const auto ranked = s.wait_job(rank["job_id"]);
    ASSERT_EQ(ranked["status"], "done") << ranked.dump();
    EXPECT_EQ(ranked["result"]["report"],
              run_rank(dir / job["result"]["files"]["mock-a"].get<std::string>(), dir / "human.jsonl", {},
                       std::nullopt));
}

TEST(ServiceJobs, RequestValidationHappensBeforeQueueing) {
    const auto dir = fresh_dir("job_errors");
    Running s(options_for(dir));
    EXPECT_EQ(s.post("/jobs/evaluate", json::object()).first, 400);
    EXPECT_EQ(s.post("/jobs/evaluate", {{"corpus", "missing.jsonl"}}).first, 404);
    EXPECT_EQ(s.post("/jobs/evaluate", {{"corpus", "../etc/passwd"}}).first, 400);
    EXPECT_EQ(s.post("/jobs/evaluate", {{"corpus", "/etc/passwd"}}).first, 400);
    fs::copy_file(kFixtures / "ten.jsonl", dir / "ten.jsonl");
    EXPECT_EQ(s.post("/jobs/evaluate", {{"corpus", "ten.jsonl"}, {"judges", {"nobody"}}}).first, 400);
    EXPECT_TRUE(s.get("/jobs").second.empty());
}

TEST(ServiceJobs, FailedJobCarriesModuleError) {
    const auto dir = fresh_dir("job_fail");
    fs::copy_file(kFixtures / "ten.jsonl", dir / "ten.jsonl");
    Running s(options_for(dir));
    write_file(dir / "bad_human.jsonl", "");
    fs::create_directories(dir / "empty");
    auto [status, job] = s.post("/jobs/train-weights", {{"judges", {"x"}}, {"scores", "empty"}, {"human", "bad_human.jsonl"}});
    ASSERT_EQ(status, 202);
    const auto done = s.wait_job(job["job_id"]);
    EXPECT_EQ(done["status"], "failed");
    EXPECT_TRUE(done["error"]["error"].contains("message"));
}

TEST(ServiceJobs, BaselinesJob) {
    const auto dir = fresh_dir("job_baselines");
    fs::copy_file(kFixtures / "ten.jsonl", dir / "ten.jsonl");
    fs::copy_file(kFixtures / "candidates.jsonl", dir / "candidates.jsonl");
    Running s(options_for(dir));
    auto [status, job] = s.post("/jobs/baselines", {{"candidates", "candidates.jsonl"}, {"references", "ten.jsonl"},
                                                    {"metrics", {"bleu1", "rougeL"}}});
    ASSERT_EQ(status, 202);
    const auto done = s.wait_job(job["job_id"]);
    ASSERT_EQ(done["status"], "done") << done.dump();
    EXPECT_EQ(done["result"]["report"],
              run_baselines(dir / "candidates.jsonl", dir / "ten.jsonl", {Metric::bleu1, Metric::rougeL}, std::nullopt));
}

TEST(JobManagerTest, StatusMovesForwardAndSurvivesRestart) {
    const auto dir = fresh_dir("manager");
    std::string ok_id, bad_id;
    {
        JobManager m(dir, 1);
        ok_id = m.submit(JobKind::rank, json::object(), [](JobManager::Context& c) {
            c.progress(1, 1);
            return json{{"answer", 42}};
        });
        bad_id = m.submit(JobKind::rank, json::object(), [](JobManager::Context&) -> json {
            fail(ErrorKind::invalid_argument, "boom");
        });
        EXPECT_EQ(m.wait(ok_id, std::chrono::seconds(10))->status, JobStatus::done);
        EXPECT_EQ(m.wait(bad_id, std::chrono::seconds(10))->status, JobStatus::failed);
    }
    // a record left running by a crash
    auto stale = JobRecord::from_json(json::parse(read_file(dir / "jobs" / (ok_id + ".json"))));
    stale.job_id = "job-7";
    stale.status = JobStatus::running;
    write_file(dir / "jobs" / "job-7.json", stale.to_json().dump());
    JobManager again(dir, 1);
    EXPECT_EQ(again.get(ok_id)->result["answer"], 42);
    EXPECT_EQ(again.get(bad_id)->error["error"]["message"], "boom");
    EXPECT_EQ(again.get("job-7")->status, JobStatus::failed);
    const auto next = again.submit(JobKind::rank, json::object(), [](JobManager::Context&) { return json(); });
    EXPECT_EQ(next, "job-8");
}
