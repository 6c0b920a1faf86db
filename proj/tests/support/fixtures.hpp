// Shared annotation fixtures.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "feel/annotation.hpp"
#include "feel/rng.hpp"

namespace fixture {

/// Three annotators, two dialogues, round-1 scores in which exactly three
/// (dialogue, aspect) keys have a gap above one point:
///   d1/informativeness (1, 3, 2), d1/safety (0, 2, 1.5), d2/coherence (3, 1.5, 3).
/// d2/helpfulness (2, 2, 3) sits exactly on the boundary and must not flag.
inline std::vector<feel::AnnotatorScore> three_flag_round1() {
    using feel::Aspect;
    const std::vector<std::string> annotators{"ann1", "ann2", "ann3"};
    std::map<std::pair<std::string, Aspect>, std::vector<double>> special{
        {{"d1", Aspect::informativeness}, {1, 3, 2}},
        {{"d1", Aspect::safety}, {0, 2, 1.5}},
        {{"d2", Aspect::coherence}, {3, 1.5, 3}},
        {{"d2", Aspect::helpfulness}, {2, 2, 3}},
    };
    std::vector<feel::AnnotatorScore> out;
    for (const std::string d : {"d1", "d2"}) {
        for (Aspect a : feel::kAllAspects) {
            auto it = special.find({d, a});
            for (std::size_t k = 0; k < annotators.size(); ++k) {
                const double v = it != special.end() ? it->second[k] : 2.0;
                out.push_back({annotators[k], d, a, 1, feel::LikertScore(v), ""});
            }
        }
    }
    return out;
}

/// Round-1 scores for `annotators` × `dialogues` on the 0.5 grid; about one
/// key in five gets a gap pushed beyond one point, and about one in ten gets a
/// spread of exactly one.
inline std::vector<feel::AnnotatorScore> random_round1(std::size_t annotators, std::size_t dialogues,
                                                      std::uint64_t seed) {
    feel::Rng rng(seed);
    std::vector<feel::AnnotatorScore> out;
    for (std::size_t d = 0; d < dialogues; ++d) {
        const auto did = "dlg-" + std::to_string(d);
        for (feel::Aspect a : feel::kAllAspects) {
            const double base = 0.5 * static_cast<double>(rng.below(5));  // 0..2
            const auto mode = rng.below(10);
            for (std::size_t k = 0; k < annotators; ++k) {
                double v = base + 0.5 * static_cast<double>(rng.below(2));  // spread ≤ 0.5
                if (mode < 2 && k == rng.below(annotators)) v = base > 1.0 ? 0.0 : 3.0;  // injected gap
                if (mode == 2) v = k == 0 ? base : base + 1.0;  // exactly one point apart
                out.push_back({"ann" + std::to_string(k), did, a, 1, feel::LikertScore(v), ""});
            }
        }
    }
    return out;
}

}  // namespace fixture
