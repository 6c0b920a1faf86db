// Regenerates the derived files under fixtures/ from fixtures/ten.jsonl.
// Human scores are synthetic: simulated annotators scatter around
// synthetic_latent_score of each transcript.

#include <algorithm>
#include <cmath>
#include <iostream>

#include <fmt/format.h>

#include "feel/annotation.hpp"
#include "feel/corpus.hpp"
#include "feel/mock_judge.hpp"
#include "feel/prompting.hpp"
#include "feel/rng.hpp"

namespace fs = std::filesystem;
using namespace feel;

namespace {

constexpr std::uint64_t kSeed = 20240226;

double clamp_score(double v) { return std::clamp(v, 0.0, 3.0); }

void write_annotations(const fs::path& dir, const std::vector<Dialogue>& corpus) {
    std::vector<std::string> ids;
    for (const auto& d : corpus) ids.push_back(d.id);
    const std::vector<std::string> annotators = {"ann1", "ann2", "ann3"};
    AnnotationSession s("fixture", ids, annotators, "2024-02-26T00:00:00.000Z");
    Rng rng(kSeed);
    for (const auto& d : corpus) {
        const auto transcript = render_transcript(d);
        for (Aspect a : kAllAspects) {
            const double latent = synthetic_latent_score(transcript, a);
            for (const auto& ann : annotators) {
                const double v = clamp_score(std::round(latent + rng.normal(0.0, 0.6)));
                s.record_score({ann, d.id, a, 1, LikertScore(v), {}});
            }
        }
    }
    const auto flags = s.advance();
    for (const auto& f : flags) {
        const auto round1 = s.effective_scores(f.key());
        double sum = 0.0;
        for (double v : round1) sum += v;
        const double agreed = std::round(sum / static_cast<double>(round1.size()));
        for (const auto& ann : annotators) s.record_score({ann, f.dialogue_id, f.aspect, 2, LikertScore(agreed), {}});
    }
    const auto human = s.close();

    std::string csv = "annotator,dialogue_id,aspect,round,score\n";
    for (const auto& sc : s.scores()) {
        csv += fmt::format("{},{},{},{},{}\n", sc.annotator_id, sc.dialogue_id, aspect_name(sc.aspect), sc.round,
                           sc.value.value());
    }
    write_file(dir / "annotations.csv", csv);
    write_file(dir / "human.jsonl", serialize_human_scores(human));
    std::cout << fmt::format("annotations: {} flags, {} consensus rows\n", flags.size(), human.size());

    // Five models with two dialogues each; tallies follow the human means.
    const std::vector<std::string> models = {"model-A", "model-B", "model-C", "model-D", "model-E"};
    std::string map_csv = "dialogue_id,model\n";
    std::map<std::string, std::vector<double>> per_model;
    const HumanScores hs(human);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& model = models[i % models.size()];
        map_csv += fmt::format("{},{}\n", corpus[i].id, model);
        double sum = 0.0;
        for (Aspect a : kAllAspects) sum += *hs.find(corpus[i].id, a);
        per_model[model].push_back(sum / static_cast<double>(kAspectCount));
    }
    write_file(dir / "models.csv", map_csv);
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    std::string tallies = "model_a,model_b,wins_a,wins_b,ties\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            const double diff = mean(per_model[models[i]]) - mean(per_model[models[j]]);
            const auto wins_a = static_cast<int>(std::clamp(std::lround(9.0 + 6.0 * diff), 0L, 18L));
            tallies += fmt::format("{},{},{},{},2\n", models[i], models[j], wins_a, 18 - wins_a);
        }
    }
    write_file(dir / "tallies.csv", tallies);
}

void write_synthetic(const fs::path& dir) {
    static const std::vector<std::string> openings = {
        "I feel overwhelmed by work", "My sister and I are not speaking", "I failed my driving test",
        "I can't focus on anything", "My dog is sick", "I'm nervous about moving abroad",
        "I had a fight with my roommate", "I keep doubting myself", "My exams went badly",
        "I feel invisible at school"};
    static const std::vector<std::string> replies = {
        "That sounds hard. Can you tell me more?", "I understand why that would upset you.",
        "Have you thought about talking to someone you trust?", "It is okay to feel this way.",
        "What would help you most right now?"};
    Rng rng(kSeed + 1);
    std::vector<Dialogue> corpus;
    std::string human;
    for (int i = 0; i < 50; ++i) {
        Dialogue d;
        d.id = fmt::format("syn-{:03}", i + 1);
        d.source = Source::generated;
        d.topic = "synthetic";
        d.turns.push_back({Role::seeker, fmt::format("{} (case {}).", openings[rng.below(openings.size())], i + 1)});
        for (int t = 0; t < 2; ++t) {
            d.turns.push_back({Role::supporter, replies[rng.below(replies.size())]});
            d.turns.push_back({Role::seeker, t == 0 ? "Yes, it has been weighing on me." : "Thank you."});
        }
        d.turns.push_back({Role::supporter, replies[rng.below(replies.size())]});
        const auto transcript = render_transcript(d);
        for (Aspect a : kAllAspects) {
            HumanScore h{d.id, a, synthetic_latent_score(transcript, a), 1, 0.0};
            human += dump_compact(h.to_json()) + "\n";
        }
        corpus.push_back(std::move(d));
    }
    write_corpus(dir / "synthetic50.jsonl", corpus);
    write_file(dir / "synthetic50_human.jsonl", human);
    std::cout << "synthetic: 50 dialogues\n";
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path dir = argc > 1 ? argv[1] : "fixtures";
    try {
        write_annotations(dir, load_corpus(dir / "ten.jsonl", CorpusFormat::jsonl));
        write_synthetic(dir);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
