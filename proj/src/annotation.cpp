#include "feel/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

namespace feel {

namespace fs = std::filesystem;

namespace {

std::string key_text(const std::string& annotator, const ScoreKey& k) {
    return fmt::format("{}/{}/{}", annotator, k.dialogue_id, aspect_name(k.aspect));
}

std::string letters(std::size_t index) {
    std::string out;
    ++index;
    while (index > 0) {
        --index;
        out.insert(out.begin(), static_cast<char>('A' + index % 26));
        index /= 26;
    }
    return out;
}

void require_unique_nonempty(const std::vector<std::string>& items, std::string_view what) {
    if (items.empty()) fail(ErrorKind::invalid_argument, fmt::format("session needs at least one {}", what));
    std::set<std::string> seen;
    for (const auto& s : items) {
        if (trim(s).empty()) fail(ErrorKind::invalid_argument, fmt::format("empty {} id", what));
        if (!seen.insert(s).second) fail(ErrorKind::invalid_argument, fmt::format("{} '{}' listed twice", what, s));
    }
}

}  // namespace

std::string_view state_name(SessionState s) {
    switch (s) {
        case SessionState::round1: return "round1";
        case SessionState::round2: return "round2";
        case SessionState::closed: return "closed";
    }
    return "?";
}

bool valid_session_id(std::string_view id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    });
}

double max_pairwise_gap(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return *hi - *lo;
}

// --- records ---------------------------------------------------------------

json AnnotatorScore::to_json() const {
    return {{"annotator", annotator_id}, {"dialogue_id", dialogue_id}, {"aspect", aspect_name(aspect)},
            {"round", round}, {"score", value.value()}, {"timestamp", timestamp}};
}

AnnotatorScore AnnotatorScore::from_json(const json& j) {
    AnnotatorScore s;
    try {
        s.annotator_id = j.at("annotator").get<std::string>();
        s.dialogue_id = j.at("dialogue_id").get<std::string>();
        s.aspect = parse_aspect(j.at("aspect").get<std::string>());
        s.round = j.value("round", 1);
        if (!j.at("score").is_number()) fail(ErrorKind::invalid_argument, "score must be a number");
        s.value = LikertScore(j.at("score").get<double>());
        s.timestamp = j.value("timestamp", std::string());
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, fmt::format("bad score record: {}", e.what()));
    }
    return s;
}

json DiscrepancyFlag::to_json() const {
    return {{"dialogue_id", dialogue_id}, {"aspect", aspect_name(aspect)}, {"annotators", annotators},
            {"max_gap", max_gap}};
}

DiscrepancyFlag DiscrepancyFlag::from_json(const json& j) {
    return {j.at("dialogue_id").get<std::string>(), parse_aspect(j.at("aspect").get<std::string>()),
            j.at("annotators").get<std::vector<std::string>>(), j.at("max_gap").get<double>()};
}

json WorklistItem::to_json() const {
    json peers_json = json::array();
    for (const auto& p : peers) peers_json.push_back({{"label", p.label}, {"score", p.value}});
    json j = {{"dialogue_id", dialogue_id}, {"aspect", aspect_name(aspect)}, {"own_score", own_score},
              {"peers", std::move(peers_json)}};
    j["rescored"] = rescored ? json(*rescored) : json(nullptr);
    return j;
}

// --- session ---------------------------------------------------------------

AnnotationSession::AnnotationSession(std::string session_id, std::vector<std::string> dialogues,
                                     std::vector<std::string> annotators, std::string created_at)
    : id_(std::move(session_id)),
      created_at_(std::move(created_at)),
      dialogues_(std::move(dialogues)),
      annotators_(std::move(annotators)) {
    if (!valid_session_id(id_)) {
        fail(ErrorKind::invalid_argument, fmt::format("invalid session id '{}' (use [A-Za-z0-9_-], at most 64)", id_));
    }
    require_unique_nonempty(dialogues_, "dialogue");
    require_unique_nonempty(annotators_, "annotator");
    events_.push_back({{"type", "created"}, {"session_id", id_}, {"dialogues", dialogues_},
                       {"annotators", annotators_}, {"timestamp", created_at_}});
}

bool AnnotationSession::is_flagged(const ScoreKey& key) const {
    return std::any_of(flags_.begin(), flags_.end(), [&](const DiscrepancyFlag& f) { return f.key() == key; });
}

void AnnotationSession::record_score(const AnnotatorScore& score) {
    if (state_ == SessionState::closed) fail(ErrorKind::conflict, fmt::format("session '{}' is closed", id_));
    if (std::find(annotators_.begin(), annotators_.end(), score.annotator_id) == annotators_.end()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("annotator '{}' is not a member of session '{}'", score.annotator_id, id_));
    }
    if (std::find(dialogues_.begin(), dialogues_.end(), score.dialogue_id) == dialogues_.end()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("dialogue '{}' is not part of session '{}'", score.dialogue_id, id_));
    }
    if (score.round != 1 && score.round != 2) {
        fail(ErrorKind::invalid_argument, fmt::format("round must be 1 or 2, got {}", score.round));
    }
    const int current = state_ == SessionState::round1 ? 1 : 2;
    if (score.round != current) {
        fail(ErrorKind::conflict, fmt::format("session '{}' is in {}; round-{} scores are not accepted", id_,
                                              state_name(state_), score.round));
    }
    const ScoreKey key{score.dialogue_id, score.aspect};
    if (score.round == 2 && !is_flagged(key)) {
        fail(ErrorKind::conflict,
             fmt::format("{}/{} is not in rescoring worklist", score.dialogue_id, aspect_name(score.aspect)));
    }
    StoredKey stored{score.annotator_id, score.dialogue_id, score.aspect, score.round};
    if (scores_.count(stored)) {
        fail(ErrorKind::conflict,
             fmt::format("duplicate round-{} score for {}", score.round, key_text(score.annotator_id, key)));
    }
    scores_.emplace(std::move(stored), score);
    events_.push_back({{"type", "score"}, {"score", score.to_json()}});
}

const AnnotatorScore* AnnotationSession::find_score(const std::string& annotator, const ScoreKey& key,
                                                    int round) const {
    auto it = scores_.find(StoredKey{annotator, key.dialogue_id, key.aspect, round});
    return it == scores_.end() ? nullptr : &it->second;
}

std::vector<AnnotatorScore> AnnotationSession::scores() const {
    std::vector<AnnotatorScore> out;
    for (const auto& [_, s] : scores_) out.push_back(s);
    return out;
}

std::vector<std::string> AnnotationSession::missing_round1() const {
    std::vector<std::string> out;
    for (const auto& d : dialogues_) {
        for (Aspect a : kAllAspects) {
            for (const auto& ann : annotators_) {
                if (!find_score(ann, {d, a}, 1)) out.push_back(key_text(ann, {d, a}));
            }
        }
    }
    return out;
}

std::vector<DiscrepancyFlag> AnnotationSession::detect_discrepancies() const {
    auto missing = missing_round1();
    if (!missing.empty()) {
        throw DiagnosticError(ErrorKind::conflict,
                              fmt::format("round 1 of session '{}' is incomplete ({} scores missing)", id_,
                                          missing.size()),
                              std::move(missing));
    }
    std::vector<DiscrepancyFlag> flags;
    for (const auto& d : dialogues_) {
        for (Aspect a : kAllAspects) {
            std::vector<double> values;
            for (const auto& ann : annotators_) values.push_back(find_score(ann, {d, a}, 1)->value.value());
            const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
            if (!(*hi - *lo > kDiscrepancyThreshold)) continue;
            DiscrepancyFlag f{d, a, {}, *hi - *lo};
            // A value takes part in some >1 gap iff it is that far from an extreme.
            for (std::size_t k = 0; k < annotators_.size(); ++k) {
                if (values[k] - *lo > kDiscrepancyThreshold || *hi - values[k] > kDiscrepancyThreshold) {
                    f.annotators.push_back(annotators_[k]);
                }
            }
            std::sort(f.annotators.begin(), f.annotators.end());
            flags.push_back(std::move(f));
        }
    }
    return flags;
}

void AnnotationSession::open_rescoring_round(const std::vector<DiscrepancyFlag>& flags, const std::string& timestamp) {
    if (state_ != SessionState::round1) {
        fail(ErrorKind::conflict, fmt::format("session '{}' is already in {}", id_, state_name(state_)));
    }
    auto missing = missing_round1();
    if (!missing.empty()) {
        throw DiagnosticError(ErrorKind::conflict,
                              fmt::format("round 1 of session '{}' is incomplete ({} scores missing)", id_,
                                          missing.size()),
                              std::move(missing));
    }
    std::set<ScoreKey> seen;
    for (const auto& f : flags) {
        if (std::find(dialogues_.begin(), dialogues_.end(), f.dialogue_id) == dialogues_.end()) {
            fail(ErrorKind::invalid_argument, fmt::format("flag names unknown dialogue '{}'", f.dialogue_id));
        }
        if (!(f.max_gap > 1.0)) {
            fail(ErrorKind::invalid_argument, fmt::format("flag on {}/{} has gap {} (must exceed 1)", f.dialogue_id,
                                                          aspect_name(f.aspect), f.max_gap));
        }
        if (!seen.insert(f.key()).second) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("flag on {}/{} listed twice", f.dialogue_id, aspect_name(f.aspect)));
        }
    }
    flags_ = flags;
    state_ = SessionState::round2;
    json flags_json = json::array();
    for (const auto& f : flags_) flags_json.push_back(f.to_json());
    events_.push_back({{"type", "advance"}, {"flags", std::move(flags_json)}, {"timestamp", timestamp}});
}

std::vector<DiscrepancyFlag> AnnotationSession::advance(const std::string& timestamp) {
    if (state_ != SessionState::round1) {
        fail(ErrorKind::conflict, fmt::format("session '{}' is already in {}", id_, state_name(state_)));
    }
    auto flags = detect_discrepancies();
    open_rescoring_round(flags, timestamp);
    return flags;
}

std::string AnnotationSession::label_for(const std::string& viewer, const std::string& peer) const {
    // Labels skip the viewer so peers always read A, B, C...
    std::size_t index = 0;
    for (const auto& a : annotators_) {
        if (a == peer) break;
        if (a != viewer) ++index;
    }
    return "Annotator " + letters(index);
}

std::vector<WorklistItem> AnnotationSession::worklist(const std::string& annotator_id) const {
    if (std::find(annotators_.begin(), annotators_.end(), annotator_id) == annotators_.end()) {
        fail(ErrorKind::not_found, fmt::format("annotator '{}' is not a member of session '{}'", annotator_id, id_));
    }
    std::vector<WorklistItem> out;
    for (const auto& f : flags_) {
        WorklistItem item;
        item.dialogue_id = f.dialogue_id;
        item.aspect = f.aspect;
        item.own_score = find_score(annotator_id, f.key(), 1)->value.value();
        for (const auto& peer : annotators_) {
            if (peer == annotator_id) continue;
            item.peers.push_back({label_for(annotator_id, peer), find_score(peer, f.key(), 1)->value.value()});
        }
        if (const auto* r2 = find_score(annotator_id, f.key(), 2)) item.rescored = r2->value.value();
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<std::string> AnnotationSession::unresolved() const {
    std::vector<std::string> out;
    for (const auto& f : flags_) {
        for (const auto& ann : annotators_) {
            if (!find_score(ann, f.key(), 2)) out.push_back(key_text(ann, f.key()));
        }
    }
    return out;
}

std::vector<double> AnnotationSession::effective_scores(const ScoreKey& key) const {
    std::vector<double> out;
    for (const auto& ann : annotators_) {
        const auto* s = find_score(ann, key, 2);
        if (!s) s = find_score(ann, key, 1);
        if (!s) fail(ErrorKind::missing_score, fmt::format("no score for {}", key_text(ann, key)));
        out.push_back(s->value.value());
    }
    return out;
}

std::vector<HumanScore> AnnotationSession::close(const std::string& timestamp) {
    if (state_ != SessionState::round2) {
        fail(ErrorKind::conflict, fmt::format("session '{}' is in {}; advance it to round2 before closing", id_,
                                              state_name(state_)));
    }
    auto open = unresolved();
    if (!open.empty()) {
        throw DiagnosticError(ErrorKind::conflict,
                              fmt::format("{} rescoring items of session '{}' are unresolved", open.size(), id_),
                              std::move(open));
    }
    std::map<ScoreKey, double> consensus;
    for (const auto& d : dialogues_) {
        for (Aspect a : kAllAspects) {
            const auto values = effective_scores({d, a});
            double sum = 0.0;
            for (double v : values) sum += v;
            consensus[{d, a}] = sum / static_cast<double>(values.size());
        }
    }
    consensus_ = std::move(consensus);
    state_ = SessionState::closed;
    events_.push_back({{"type", "close"}, {"timestamp", timestamp}});
    return human_scores();
}

std::vector<HumanScore> AnnotationSession::human_scores() const {
    if (state_ != SessionState::closed) {
        fail(ErrorKind::conflict, fmt::format("session '{}' has no consensus until it is closed", id_));
    }
    std::vector<HumanScore> out;
    for (const auto& d : dialogues_) {
        for (Aspect a : kAllAspects) {
            const ScoreKey key{d, a};
            out.push_back({d, a, consensus_.at(key), annotators_.size(), max_pairwise_gap(effective_scores(key))});
        }
    }
    return out;
}

void AnnotationSession::apply(const json& event) {
    const auto type = event.at("type").get<std::string>();
    if (type == "score") {
        record_score(AnnotatorScore::from_json(event.at("score")));
    } else if (type == "advance") {
        std::vector<DiscrepancyFlag> flags;
        for (const auto& f : event.at("flags")) flags.push_back(DiscrepancyFlag::from_json(f));
        open_rescoring_round(flags, event.value("timestamp", std::string()));
    } else if (type == "close") {
        close(event.value("timestamp", std::string()));
    } else {
        fail(ErrorKind::parse, fmt::format("unknown session event '{}'", type));
    }
}

AnnotationSession AnnotationSession::replay(const std::vector<json>& events) {
    if (events.empty() || events.front().value("type", "") != "created") {
        fail(ErrorKind::parse, "session event log must start with a 'created' event");
    }
    const auto& c = events.front();
    AnnotationSession s(c.at("session_id").get<std::string>(), c.at("dialogues").get<std::vector<std::string>>(),
                        c.at("annotators").get<std::vector<std::string>>(), c.value("timestamp", std::string()));
    for (std::size_t i = 1; i < events.size(); ++i) s.apply(events[i]);
    return s;
}

json AnnotationSession::to_json() const {
    json scores_json = json::array();
    for (const auto& [_, s] : scores_) scores_json.push_back(s.to_json());
    json flags_json = json::array();
    for (const auto& f : flags_) flags_json.push_back(f.to_json());

    json progress = json::object();
    const std::size_t r1_total = dialogues_.size() * kAspectCount;
    for (const auto& ann : annotators_) {
        std::size_t r1 = 0;
        std::size_t r2 = 0;
        for (const auto& [k, _] : scores_) {
            if (k.annotator != ann) continue;
            (k.round == 1 ? r1 : r2)++;
        }
        progress[ann] = {{"round1", r1}, {"round1_total", r1_total}, {"round2", r2}, {"round2_total", flags_.size()}};
    }

    json j = {{"session_id", id_},         {"created_at", created_at_}, {"state", state_name(state_)},
              {"dialogues", dialogues_},   {"annotators", annotators_}, {"scores", std::move(scores_json)},
              {"flags", std::move(flags_json)}, {"progress", std::move(progress)}};
    if (state_ == SessionState::closed) {
        json consensus = json::array();
        json residual = json::array();
        for (const auto& h : human_scores()) {
            consensus.push_back(h.to_json());
            if (h.residual_gap > kDiscrepancyThreshold) residual.push_back(h.to_json());
        }
        j["consensus"] = std::move(consensus);
        j["residual"] = std::move(residual);
    } else {
        j["consensus"] = nullptr;
    }
    return j;
}

// --- import / export -------------------------------------------------------

std::vector<AnnotatorScore> load_annotation_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, fmt::format("cannot read '{}'", path.string()));
    std::vector<AnnotatorScore> rows;
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split(line, ',');
        for (auto& c : cells) c = std::string(trim(c));
        if (line_no == 1 && cells.size() == 5 && cells[0] == "annotator") continue;
        if (cells.size() != 5) {
            problems.push_back(fmt::format("{}:{}: expected 5 columns, got {}", path.string(), line_no, cells.size()));
            continue;
        }
        try {
            AnnotatorScore s;
            s.annotator_id = cells[0];
            s.dialogue_id = cells[1];
            s.aspect = parse_aspect(cells[2]);
            std::size_t used = 0;
            s.round = std::stoi(cells[3], &used);
            if (used != cells[3].size()) throw std::invalid_argument("round");
            const double v = std::stod(cells[4], &used);
            if (used != cells[4].size()) throw std::invalid_argument("score");
            s.value = LikertScore(v);
            rows.push_back(std::move(s));
        } catch (const std::exception& e) {
            problems.push_back(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
    if (!problems.empty()) throw DiagnosticError(ErrorKind::parse, "invalid annotation CSV", std::move(problems));
    return rows;
}

AnnotationSession import_session(const std::string& session_id, const std::vector<AnnotatorScore>& rows, bool close) {
    std::vector<std::string> annotators;
    std::vector<std::string> dialogues;
    for (const auto& r : rows) {
        if (std::find(annotators.begin(), annotators.end(), r.annotator_id) == annotators.end()) {
            annotators.push_back(r.annotator_id);
        }
        if (std::find(dialogues.begin(), dialogues.end(), r.dialogue_id) == dialogues.end()) {
            dialogues.push_back(r.dialogue_id);
        }
    }
    AnnotationSession s(session_id, dialogues, annotators);
    bool has_round2 = false;
    for (const auto& r : rows) {
        if (r.round == 1) {
            s.record_score(r);
        } else {
            has_round2 = true;
        }
    }
    if (has_round2 || close) s.advance();
    for (const auto& r : rows) {
        if (r.round != 1) s.record_score(r);
    }
    if (close) s.close();
    return s;
}

std::string serialize_human_scores(const std::vector<HumanScore>& scores) {
    std::string out;
    for (const auto& h : scores) {
        out += dump_compact(h.to_json());
        out += '\n';
    }
    return out;
}

// --- store -----------------------------------------------------------------

SessionStore::SessionStore(std::optional<fs::path> dir) : dir_(std::move(dir)) {
    if (!dir_) return;
    const auto sessions = *dir_ / "sessions";
    fs::create_directories(sessions);
    std::vector<fs::path> logs;
    for (const auto& entry : fs::directory_iterator(sessions)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > 13 && name.ends_with(".events.jsonl")) logs.push_back(entry.path());
    }
    std::sort(logs.begin(), logs.end());
    for (const auto& path : logs) {
        std::vector<json> events;
        for_each_jsonl(path, [&](std::size_t, const json& j) { events.push_back(j); });
        auto slot = std::make_shared<Slot>();
        try {
            slot->session = std::make_unique<AnnotationSession>(AnnotationSession::replay(events));
        } catch (const Error& e) {
            fail(ErrorKind::parse, fmt::format("{}: cannot replay session log: {}", path.string(), e.what()));
        }
        sessions_.emplace(slot->session->id(), std::move(slot));
    }
}

fs::path SessionStore::log_path(const std::string& id) const { return *dir_ / "sessions" / (id + ".events.jsonl"); }

void SessionStore::persist(const AnnotationSession& s, std::size_t from) const {
    if (!dir_) return;
    const auto path = log_path(s.id());
    for (std::size_t i = from; i < s.events().size(); ++i) append_line(path, dump_compact(s.events()[i]));
}

json SessionStore::create(std::string session_id, std::vector<std::string> dialogues,
                          std::vector<std::string> annotators, const std::string& timestamp) {
    std::lock_guard lock(index_mutex_);
    if (session_id.empty()) {
        std::size_t n = sessions_.size() + 1;
        while (sessions_.count(fmt::format("session-{}", n))) ++n;
        session_id = fmt::format("session-{}", n);
    }
    if (sessions_.count(session_id)) fail(ErrorKind::conflict, fmt::format("session '{}' already exists", session_id));
    auto slot = std::make_shared<Slot>();
    slot->session = std::make_unique<AnnotationSession>(session_id, std::move(dialogues), std::move(annotators),
                                                        timestamp);
    persist(*slot->session, 0);
    auto j = slot->session->to_json();
    sessions_.emplace(session_id, std::move(slot));
    return j;
}

std::vector<std::string> SessionStore::ids() const {
    std::lock_guard lock(index_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
}

bool SessionStore::contains(const std::string& id) const {
    std::lock_guard lock(index_mutex_);
    return sessions_.count(id) > 0;
}

std::shared_ptr<SessionStore::Slot> SessionStore::find(const std::string& id) const {
    std::lock_guard lock(index_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorKind::not_found, fmt::format("no session '{}'", id));
    return it->second;
}

}  // namespace feel
