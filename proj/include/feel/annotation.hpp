#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "feel/aspect.hpp"
#include "feel/ensemble.hpp"
#include "feel/io.hpp"

namespace feel {

enum class SessionState { round1, round2, closed };

std::string_view state_name(SessionState s);

struct AnnotatorScore {
    std::string annotator_id;
    std::string dialogue_id;
    Aspect aspect = Aspect::informativeness;
    int round = 1;
    LikertScore value{0.0};
    std::string timestamp;

    json to_json() const;
    static AnnotatorScore from_json(const json& j);
};

struct ScoreKey {
    std::string dialogue_id;
    Aspect aspect = Aspect::informativeness;

    auto operator<=>(const ScoreKey&) const = default;
};

struct DiscrepancyFlag {
    std::string dialogue_id;
    Aspect aspect = Aspect::informativeness;
    /// Annotators belonging to at least one pair more than 1 point apart.
    std::vector<std::string> annotators;
    double max_gap = 0.0;

    ScoreKey key() const { return {dialogue_id, aspect}; }
    json to_json() const;
    static DiscrepancyFlag from_json(const json& j);
};

struct PeerScore {
    std::string label;  // "Annotator A"
    double value = 0.0;
};

struct WorklistItem {
    std::string dialogue_id;
    Aspect aspect = Aspect::informativeness;
    double own_score = 0.0;  // round 1
    std::vector<PeerScore> peers;
    std::optional<double> rescored;  // round 2 value once submitted

    json to_json() const;
};

/// Largest |a - b| over all pairs.
double max_pairwise_gap(const std::vector<double>& values);

/// Gaps above this count as a discrepancy; the slack keeps a gap of exactly
/// one point from flagging when decimals do not round-trip.
inline constexpr double kDiscrepancyThreshold = 1.0 + 1e-9;

class AnnotationSession {
public:
    AnnotationSession(std::string session_id, std::vector<std::string> dialogues,
                      std::vector<std::string> annotators, std::string created_at = {});

    const std::string& id() const { return id_; }
    SessionState state() const { return state_; }
    const std::vector<std::string>& dialogues() const { return dialogues_; }
    const std::vector<std::string>& annotators() const { return annotators_; }
    const std::vector<DiscrepancyFlag>& flags() const { return flags_; }
    const std::map<ScoreKey, double>& consensus() const { return consensus_; }

    /// Round-1 scores are accepted only in round 1; round-2 scores only in
    /// round 2 and only for keys on the rescoring worklist.
    void record_score(const AnnotatorScore& score);

    /// Keys of round 1 still lacking a score, as "annotator/dialogue/aspect".
    std::vector<std::string> missing_round1() const;
    /// Throws DiagnosticError listing missing keys unless round 1 is complete.
    std::vector<DiscrepancyFlag> detect_discrepancies() const;
    /// Moves to round 2; every annotator rescores every flagged key.
    void open_rescoring_round(const std::vector<DiscrepancyFlag>& flags, const std::string& timestamp = {});
    /// detect_discrepancies followed by open_rescoring_round.
    std::vector<DiscrepancyFlag> advance(const std::string& timestamp = {});

    std::vector<WorklistItem> worklist(const std::string& annotator_id) const;
    /// "annotator/dialogue/aspect" for each unsubmitted worklist entry.
    std::vector<std::string> unresolved() const;

    /// Averages effective scores into the consensus and closes the session.
    std::vector<HumanScore> close(const std::string& timestamp = {});
    /// Consensus dataset; requires a closed session.
    std::vector<HumanScore> human_scores() const;
    /// Effective scores of one key in annotator order.
    std::vector<double> effective_scores(const ScoreKey& key) const;
    const AnnotatorScore* find_score(const std::string& annotator, const ScoreKey& key, int round) const;
    std::vector<AnnotatorScore> scores() const;

    /// Full event log; replay(events()) rebuilds an identical session.
    const std::vector<json>& events() const { return events_; }
    static AnnotationSession replay(const std::vector<json>& events);
    void apply(const json& event);

    json to_json() const;

private:
    struct StoredKey {
        std::string annotator;
        std::string dialogue;
        Aspect aspect;
        int round;
        auto operator<=>(const StoredKey&) const = default;
    };

    std::string label_for(const std::string& viewer, const std::string& peer) const;
    bool is_flagged(const ScoreKey& key) const;

    std::string id_;
    std::string created_at_;
    std::vector<std::string> dialogues_;
    std::vector<std::string> annotators_;
    SessionState state_ = SessionState::round1;
    std::map<StoredKey, AnnotatorScore> scores_;
    std::vector<DiscrepancyFlag> flags_;
    std::map<ScoreKey, double> consensus_;
    std::vector<json> events_;
};

/// Rows `annotator,dialogue_id,aspect,round,score` with an optional header.
std::vector<AnnotatorScore> load_annotation_csv(const std::filesystem::path& path);

/// Builds a session from imported rows: records round 1, advances when round
/// 1 is complete, records round 2 rows and closes when `close` is set.
AnnotationSession import_session(const std::string& session_id, const std::vector<AnnotatorScore>& rows,
                                 bool close);

std::string serialize_human_scores(const std::vector<HumanScore>& scores);

/// Sessions with one append-only event log per session under
/// `<dir>/sessions/`. Reads of a session run concurrently; mutations of one
/// session are serialized. Without a directory, state lives in memory only.
class SessionStore {
public:
    explicit SessionStore(std::optional<std::filesystem::path> dir = std::nullopt);

    /// Throws conflict when the id exists; an empty id picks the next free
    /// "session-N".
    json create(std::string session_id, std::vector<std::string> dialogues, std::vector<std::string> annotators,
                const std::string& timestamp);
    std::vector<std::string> ids() const;
    bool contains(const std::string& id) const;

    /// Runs `fn(const AnnotationSession&)` under a shared lock.
    template <class Fn>
    auto read(const std::string& id, Fn&& fn) const {
        auto slot = find(id);
        std::shared_lock lock(slot->mutex);
        return fn(static_cast<const AnnotationSession&>(*slot->session));
    }

    /// Runs `fn(AnnotationSession&)` on a copy; on success the new events are
    /// appended to the log and the copy replaces the session.
    template <class Fn>
    auto mutate(const std::string& id, Fn&& fn) {
        auto slot = find(id);
        std::unique_lock lock(slot->mutex);
        AnnotationSession draft = *slot->session;
        const auto before = draft.events().size();
        if constexpr (std::is_void_v<decltype(fn(draft))>) {
            fn(draft);
            persist(draft, before);
            *slot->session = std::move(draft);
        } else {
            auto result = fn(draft);
            persist(draft, before);
            *slot->session = std::move(draft);
            return result;
        }
    }

private:
    struct Slot {
        mutable std::shared_mutex mutex;
        std::unique_ptr<AnnotationSession> session;
    };

    std::shared_ptr<Slot> find(const std::string& id) const;
    void persist(const AnnotationSession& s, std::size_t from) const;
    std::filesystem::path log_path(const std::string& id) const;

    std::optional<std::filesystem::path> dir_;
    mutable std::mutex index_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

/// Session ids double as file names.
bool valid_session_id(std::string_view id);

}  // namespace feel
