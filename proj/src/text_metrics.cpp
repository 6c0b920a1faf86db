#include "feel/text_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include <fmt/format.h>

#include "feel/error.hpp"

namespace feel {

namespace {

/// Decodes one code point; returns the byte length consumed (>= 1). Invalid
/// sequences decode as the single byte value with the high bit set.
std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
    if (b0 < 0x80) {
        cp = b0;
        return 1;
    }
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        cp = (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
        return 2;
    }
    if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        cp = (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
        return 3;
    }
    if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        cp = (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
        return 4;
    }
    cp = 0xDC00 + b0;  // lone surrogate range: never produced by valid input
    return 1;
}

void encode_utf8(char32_t cp, std::string& out) {
    if (cp >= 0xDC80 && cp <= 0xDCFF) {  // passthrough of an invalid byte
        out += static_cast<char>(cp - 0xDC00);
    } else if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

bool is_space(char32_t c) {
    return c == ' ' || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200B) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
           c == 0x205F || c == 0x3000 || c == 0xFEFF;
}

bool is_punct(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
               (c >= 0x7B && c <= 0x7E) || c < 0x20 || c == 0x7F;
    }
    return (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB2 && c != 0xB3 && c != 0xB5 &&
            c != 0xB9 && c != 0xBA && c != 0xBC && c != 0xBD && c != 0xBE) ||
           c == 0xD7 || c == 0xF7 ||
           (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||  // general punctuation
           (c >= 0x20A0 && c <= 0x20CF) ||                                   // currency
           (c >= 0x2190 && c <= 0x23FF) ||                                   // arrows, math, technical
           (c >= 0x2500 && c <= 0x27BF) ||                                   // box drawing, dingbats
           (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||   // CJK punctuation
           (c >= 0x3014 && c <= 0x301F) ||
           (c >= 0xFE10 && c <= 0xFE19) || (c >= 0xFE30 && c <= 0xFE4F) ||
           (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||   // full-width
           (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65) ||
           (c >= 0x1F300 && c <= 0x1FAFF);                                   // emoji and symbols
}

char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if ((c >= 0xC0 && c <= 0xDE && c != 0xD7)) return c + 32;             // Latin-1
    // Latin Extended-A pairs upper/lower case; the parity flips around 0x138.
    if ((c >= 0x100 && c <= 0x137) || (c >= 0x14A && c <= 0x177)) return c % 2 == 0 ? c + 1 : c;
    if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) return c % 2 == 1 ? c + 1 : c;
    if (c == 0x178) return 0xFF;
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;           // Greek
    if (c >= 0x410 && c <= 0x42F) return c + 32;                         // Cyrillic
    if (c >= 0x400 && c <= 0x40F) return c + 80;
    return c;
}

using Counts = std::unordered_map<std::string, std::size_t>;

Counts ngram_counts(const Tokens& t, int n) {
    Counts counts;
    const auto k = static_cast<std::size_t>(n);
    if (t.size() < k) return counts;
    for (std::size_t i = 0; i + k <= t.size(); ++i) {
        std::string key = t[i];
        for (std::size_t j = 1; j < k; ++j) {
            key += '\x1f';
            key += t[i + j];
        }
        ++counts[key];
    }
    return counts;
}

std::size_t clipped_overlap(const Counts& cand, const Counts& ref) {
    std::size_t m = 0;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) m += std::min(c, it->second);
    }
    return m;
}

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

void require_order(int n) {
    if (n < 1) fail(ErrorKind::invalid_argument, fmt::format("n-gram order {} must be >= 1", n));
}

}  // namespace

Tokens tokenize(std::string_view text) {
    Tokens tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) tokens.push_back(std::move(word));
        word.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
        char32_t cp;
        i += decode_utf8(text, i, cp);
        if (is_space(cp)) {
            flush();
        } else if (is_punct(cp)) {
            flush();
            std::string p;
            encode_utf8(cp, p);
            tokens.push_back(std::move(p));
        } else {
            encode_utf8(to_lower(cp), word);
        }
    }
    flush();
    return tokens;
}

std::string join_tokens(const Tokens& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

double bleu(const Tokens& candidate, std::span<const Tokens> references, int n) {
    require_order(n);
    if (candidate.empty()) fail(ErrorKind::invalid_argument, "BLEU candidate is empty");
    if (references.empty()) fail(ErrorKind::invalid_argument, "BLEU needs at least one reference");
    const int orders = std::min<int>(n, static_cast<int>(candidate.size()));
    double log_sum = 0.0;
    for (int k = 1; k <= orders; ++k) {
        const auto cand = ngram_counts(candidate, k);
        Counts max_ref;
        for (const auto& ref : references) {
            for (const auto& [g, c] : ngram_counts(ref, k)) max_ref[g] = std::max(max_ref[g], c);
        }
        const auto matched = clipped_overlap(cand, max_ref);
        const auto total = candidate.size() - static_cast<std::size_t>(k) + 1;
        const double p = matched == 0 ? kBleuEpsilon / static_cast<double>(total)
                                      : static_cast<double>(matched) / static_cast<double>(total);
        log_sum += std::log(p);
    }
    // closest reference length, shorter wins ties
    const auto c = static_cast<double>(candidate.size());
    double r = static_cast<double>(references.front().size());
    for (const auto& ref : references) {
        const auto len = static_cast<double>(ref.size());
        if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / static_cast<double>(orders));
}

double rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
    require_order(n);
    if (candidate.empty() || reference.empty()) fail(ErrorKind::invalid_argument, "ROUGE inputs must be non-empty");
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    const auto cand_total = candidate.size() < static_cast<std::size_t>(n) ? 0 : candidate.size() - n + 1;
    const auto ref_total = reference.size() < static_cast<std::size_t>(n) ? 0 : reference.size() - n + 1;
    if (cand_total == 0 || ref_total == 0) return candidate == reference ? 1.0 : 0.0;
    const auto m = static_cast<double>(clipped_overlap(cand, ref));
    return f1(m / static_cast<double>(cand_total), m / static_cast<double>(ref_total));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    if (a.empty() || b.empty()) return 0;
    // Hyyrö's bit-vector LCS: one bit per position of `a`.
    std::unordered_map<std::string_view, std::vector<std::uint64_t>> match;
    const std::size_t words = (a.size() + 63) / 64;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto& m = match[a[i]];
        if (m.empty()) m.assign(words, 0);
        m[i / 64] |= std::uint64_t{1} << (i % 64);
    }
    std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
    const std::vector<std::uint64_t> none(words, 0);
    for (const auto& tok : b) {
        auto it = match.find(tok);
        const auto& m = it == match.end() ? none : it->second;
        std::uint64_t carry = 0;
        for (std::size_t w = 0; w < words; ++w) {
            const std::uint64_t u = v[w] & m[w];
            const std::uint64_t sum1 = v[w] + u;
            const std::uint64_t c1 = sum1 < v[w] ? 1 : 0;
            const std::uint64_t sum = sum1 + carry;
            const std::uint64_t c2 = sum < sum1 ? 1 : 0;
            carry = c1 | c2;
            v[w] = sum | (v[w] - u);
        }
    }
    std::size_t zeros = 0;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t x = ~v[w];
        if (w + 1 == words && a.size() % 64 != 0) x &= (std::uint64_t{1} << (a.size() % 64)) - 1;
        zeros += static_cast<std::size_t>(__builtin_popcountll(x));
    }
    return zeros;
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) fail(ErrorKind::invalid_argument, "ROUGE inputs must be non-empty");
    const auto l = static_cast<double>(lcs_length(candidate, reference));
    return f1(l / static_cast<double>(candidate.size()), l / static_cast<double>(reference.size()));
}

MeteorBreakdown meteor_breakdown(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) fail(ErrorKind::invalid_argument, "METEOR inputs must be non-empty");
    std::vector<bool> used(reference.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> alignment;  // (cand, ref)
    std::size_t prev_ref = reference.size();  // none
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        std::size_t pick = reference.size();
        if (prev_ref + 1 < reference.size() && !used[prev_ref + 1] && reference[prev_ref + 1] == candidate[i]) {
            pick = prev_ref + 1;
        } else {
            for (std::size_t j = 0; j < reference.size(); ++j) {
                if (!used[j] && reference[j] == candidate[i]) {
                    pick = j;
                    break;
                }
            }
        }
        if (pick == reference.size()) {
            prev_ref = reference.size();
            continue;
        }
        used[pick] = true;
        alignment.emplace_back(i, pick);
        prev_ref = pick;
    }
    MeteorBreakdown out;
    out.matches = alignment.size();
    if (out.matches == 0) return out;
    out.chunks = 1;
    for (std::size_t k = 1; k < alignment.size(); ++k) {
        const bool adjacent = alignment[k].first == alignment[k - 1].first + 1 &&
                              alignment[k].second == alignment[k - 1].second + 1;
        if (!adjacent) ++out.chunks;
    }
    const auto m = static_cast<double>(out.matches);
    out.precision = m / static_cast<double>(candidate.size());
    out.recall = m / static_cast<double>(reference.size());
    out.f_mean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
    out.penalty = 0.5 * std::pow(static_cast<double>(out.chunks) / m, 3.0);
    out.score = out.f_mean * (1.0 - out.penalty);
    return out;
}

double meteor(const Tokens& candidate, const Tokens& reference) {
    return meteor_breakdown(candidate, reference).score;
}

std::string_view metric_name(Metric m) {
    switch (m) {
    case Metric::bleu1: return "bleu1";
    case Metric::bleu2: return "bleu2";
    case Metric::rouge1: return "rouge1";
    case Metric::rouge2: return "rouge2";
    case Metric::rougeL: return "rougeL";
    case Metric::meteor: return "meteor";
    }
    return "";
}

Metric parse_metric(std::string_view name) {
    for (Metric m : all_metrics()) {
        if (metric_name(m) == name) return m;
    }
    fail(ErrorKind::invalid_argument, fmt::format("unknown metric '{}'", name));
}

std::vector<Metric> all_metrics() {
    return {Metric::bleu1, Metric::bleu2, Metric::rouge1, Metric::rouge2, Metric::rougeL, Metric::meteor};
}

double score_pair(Metric m, const Tokens& candidate, const Tokens& reference) {
    switch (m) {
    case Metric::bleu1: return bleu(candidate, std::span<const Tokens>(&reference, 1), 1);
    case Metric::bleu2: return bleu(candidate, std::span<const Tokens>(&reference, 1), 2);
    case Metric::rouge1: return rouge_n(candidate, reference, 1);
    case Metric::rouge2: return rouge_n(candidate, reference, 2);
    case Metric::rougeL: return rouge_l(candidate, reference);
    case Metric::meteor: return meteor(candidate, reference);
    }
    return 0.0;
}

std::vector<CandidateRecord> load_candidates(const std::filesystem::path& path) {
    std::vector<CandidateRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back({j.at("model").get<std::string>(), j.at("dialogue_id").get<std::string>(),
                           j.at("responses").get<std::vector<std::string>>()});
        } catch (const json::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: bad candidate record: {}", path.string(), line, e.what()));
        }
    });
    return out;
}

std::vector<ReferenceRecord> load_references(const std::filesystem::path& path) {
    std::vector<ReferenceRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            if (j.contains("turns")) {
                ReferenceRecord r{j.at("id").get<std::string>(), {}};
                for (const auto& t : j["turns"]) {
                    if (t.at("role").get<std::string>() == "supporter") r.responses.push_back(t.at("text").get<std::string>());
                }
                out.push_back(std::move(r));
            } else {
                out.push_back({j.at("dialogue_id").get<std::string>(), j.at("responses").get<std::vector<std::string>>()});
            }
        } catch (const json::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: bad reference record: {}", path.string(), line, e.what()));
        }
    });
    return out;
}

json CorpusScores::to_json() const {
    return {{"summary", summary}, {"per_dialogue", per_dialogue}};
}

CorpusScores score_corpus(std::span<const CandidateRecord> candidates,
                          std::span<const ReferenceRecord> references, std::span<const Metric> metrics) {
    std::map<std::string, const ReferenceRecord*> refs;
    for (const auto& r : references) refs[r.dialogue_id] = &r;
    CorpusScores out;
    for (const auto& c : candidates) {
        auto it = refs.find(c.dialogue_id);
        if (it == refs.end()) {
            fail(ErrorKind::invalid_argument, fmt::format("no reference for dialogue '{}'", c.dialogue_id));
        }
        const auto& ref = *it->second;
        if (ref.responses.size() != c.responses.size() || c.responses.empty()) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("model '{}' dialogue '{}': {} responses vs {} references", c.model,
                             c.dialogue_id, c.responses.size(), ref.responses.size()));
        }
        auto& row = out.per_dialogue[c.model][c.dialogue_id];
        for (Metric m : metrics) {
            double sum = 0.0;
            for (std::size_t i = 0; i < c.responses.size(); ++i) {
                sum += score_pair(m, tokenize(c.responses[i]), tokenize(ref.responses[i]));
            }
            row[std::string(metric_name(m))] = sum / static_cast<double>(c.responses.size());
        }
    }
    for (const auto& [model, dialogues] : out.per_dialogue) {
        for (Metric m : metrics) {
            const std::string name(metric_name(m));
            double sum = 0.0;
            for (const auto& [_, row] : dialogues) sum += row.at(name);
            out.summary[model][name] = sum / static_cast<double>(dialogues.size());
        }
    }
    return out;
}

}  // namespace feel
