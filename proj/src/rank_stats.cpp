#include "feel/rank_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "feel/error.hpp"

namespace feel {

namespace {

void require_paired(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("paired samples differ in length ({} vs {})", x.size(), y.size()));
    }
    if (x.size() < 2) fail(ErrorKind::invalid_argument, "need at least two paired observations");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            fail(ErrorKind::invalid_argument, "observations must be finite");
        }
    }
}

bool has_ties(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

double pearson(std::span<const double> a, std::span<const double> b) {
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

bool is_constant(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

/// Sorts v in place and returns the number of inversions (i < j, v[i] > v[j]).
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

}  // namespace

std::vector<double> rank_transform(std::span<const double> values) {
    if (values.empty()) fail(ErrorKind::invalid_argument, "cannot rank an empty list");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        // positions i..j (0-based) share rank mean(i+1 .. j+1)
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    require_paired(x, y);
    if (is_constant(x) || is_constant(y)) {
        fail(ErrorKind::invalid_argument, "Spearman correlation is undefined for a constant sample");
    }
    const auto rx = rank_transform(x);
    const auto ry = rank_transform(y);
    if (!has_ties(x) && !has_ties(y)) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
        const auto n = static_cast<double>(x.size());
        return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    }
    return pearson(rx, ry);
}

PairCounts count_pairs(std::span<const double> x, std::span<const double> y) {
    require_paired(x, y);
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });

    std::int64_t n1 = 0;  // pairs tied in x
    std::int64_t n3 = 0;  // pairs tied in x and y
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && x[order[j]] == x[order[i]]) ++j;
        n1 += tied_pairs(static_cast<std::int64_t>(j - i));
        for (std::size_t k = i; k < j;) {
            std::size_t m = k;
            while (m < j && y[order[m]] == y[order[k]]) ++m;
            n3 += tied_pairs(static_cast<std::int64_t>(m - k));
            k = m;
        }
        i = j;
    }

    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
    std::vector<double> buf(n);
    const std::int64_t swaps = merge_count(ys, buf, 0, n);

    std::int64_t n2 = 0;  // pairs tied in y (ys is now sorted)
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && ys[j] == ys[i]) ++j;
        n2 += tied_pairs(static_cast<std::int64_t>(j - i));
        i = j;
    }

    const std::int64_t n0 = tied_pairs(static_cast<std::int64_t>(n));
    const std::int64_t untied = n0 - n1 - n2 + n3;   // C + D
    const std::int64_t score = untied - 2 * swaps;   // C - D
    PairCounts pc;
    pc.concordant = (untied + score) / 2;
    pc.discordant = (untied - score) / 2;
    pc.ties_x = n1 - n3;
    pc.ties_y = n2 - n3;
    pc.ties_joint = n3;
    return pc;
}

namespace {

double tau_from_counts(const PairCounts& pc) {
    const auto cd = static_cast<double>(pc.concordant + pc.discordant);
    const double denom = std::sqrt((cd + static_cast<double>(pc.ties_x)) * (cd + static_cast<double>(pc.ties_y)));
    if (denom == 0.0) fail(ErrorKind::invalid_argument, "Kendall's tau-b is undefined: all pairs are tied");
    return std::clamp(static_cast<double>(pc.concordant - pc.discordant) / denom, -1.0, 1.0);
}

}  // namespace

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    return tau_from_counts(count_pairs(x, y));
}

json CorrelationReport::to_json() const {
    return {{"n", n},
            {"spearman", spearman_r},
            {"kendall_tau_b", kendall_tau},
            {"concordant", pairs.concordant},
            {"discordant", pairs.discordant},
            {"ties_x", pairs.ties_x},
            {"ties_y", pairs.ties_y},
            {"ties_joint", pairs.ties_joint},
            {"d_sq_sum", d_sq_sum}};
}

CorrelationReport correlate(std::span<const double> x, std::span<const double> y) {
    CorrelationReport r;
    r.n = x.size();
    r.spearman_r = spearman(x, y);
    r.pairs = count_pairs(x, y);
    r.kendall_tau = tau_from_counts(r.pairs);
    const auto rx = rank_transform(x);
    const auto ry = rank_transform(y);
    for (std::size_t i = 0; i < rx.size(); ++i) r.d_sq_sum += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return r;
}

// --- rankings ---------------------------------------------------------------

void RankedList::validate() const {
    std::set<std::string> labels;
    std::vector<double> ranks;
    for (const auto& [label, rank] : items) {
        if (!labels.insert(label).second) {
            fail(ErrorKind::invalid_argument, fmt::format("ranking repeats label '{}'", label));
        }
        ranks.push_back(rank);
    }
    if (ranks.empty()) fail(ErrorKind::invalid_argument, "ranking is empty");
    // Valid midranks are exactly the midranks of themselves.
    if (rank_transform(ranks) != ranks) {
        fail(ErrorKind::invalid_argument, "ranks are not midranks of a permutation of 1..n");
    }
}

RankedList ranking_from_scores(std::span<const std::string> labels, std::span<const double> scores,
                               bool higher_is_better) {
    if (labels.size() != scores.size()) fail(ErrorKind::invalid_argument, "labels and scores differ in length");
    std::vector<double> keyed(scores.begin(), scores.end());
    if (higher_is_better) {
        for (double& v : keyed) v = -v;
    }
    const auto ranks = rank_transform(keyed);
    RankedList out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.items.emplace_back(labels[i], ranks[i]);
    out.validate();
    return out;
}

namespace {

std::vector<std::pair<double, double>> align(const RankedList& p, const RankedList& r) {
    if (p.size() != r.size()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("rankings differ in size ({} vs {})", p.size(), r.size()));
    }
    std::map<std::string, double> ref;
    for (const auto& [label, rank] : r.items) ref[label] = rank;
    std::vector<std::pair<double, double>> out;
    for (const auto& [label, rank] : p.items) {
        auto it = ref.find(label);
        if (it == ref.end()) {
            fail(ErrorKind::invalid_argument, fmt::format("label '{}' missing from reference ranking", label));
        }
        out.emplace_back(rank, it->second);
    }
    if (out.empty()) fail(ErrorKind::invalid_argument, "rankings are empty");
    return out;
}

}  // namespace

double rmse(const RankedList& predicted, const RankedList& reference, RmseForm form) {
    const auto pairs = align(predicted, reference);
    double sq = 0.0;
    for (const auto& [p, r] : pairs) sq += (p - r) * (p - r);
    const auto n = static_cast<double>(pairs.size());
    return form == RmseForm::standard ? std::sqrt(sq / n) : std::sqrt(sq) / n;
}

double mae(const RankedList& predicted, const RankedList& reference) {
    const auto pairs = align(predicted, reference);
    double s = 0.0;
    for (const auto& [p, r] : pairs) s += std::abs(p - r);
    return s / static_cast<double>(pairs.size());
}

std::vector<std::pair<std::string, std::vector<PairTally>>> load_tallies_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, fmt::format("cannot read '{}'", path.string()));
    std::vector<std::pair<std::string, std::vector<PairTally>>> groups;
    std::string line;
    std::size_t line_no = 0;
    auto to_count = [&](const std::string& s) -> std::int64_t {
        try {
            std::size_t used = 0;
            const auto v = std::stoll(std::string(trim(s)), &used);
            if (used != trim(s).size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::parse, fmt::format("{}:{}: '{}' is not an integer count", path.string(), line_no, s));
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cols = split(trim(line), ',');
        for (auto& c : cols) c = std::string(trim(c));
        if (cols[0] == "model_a" || cols[0] == "topic") continue;  // header
        std::string topic;
        if (cols.size() == 6) {
            topic = cols[0];
            cols.erase(cols.begin());
        }
        if (cols.size() != 5) {
            fail(ErrorKind::parse, fmt::format("{}:{}: expected model_a,model_b,wins_a,wins_b,ties",
                                               path.string(), line_no));
        }
        PairTally t{cols[0], cols[1], to_count(cols[2]), to_count(cols[3]), to_count(cols[4])};
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == topic; });
        if (it == groups.end()) {
            groups.emplace_back(topic, std::vector<PairTally>{});
            it = std::prev(groups.end());
        }
        it->second.push_back(std::move(t));
    }
    return groups;
}

RankedList ranking_from_pairwise(std::span<const PairTally> tallies) {
    std::map<std::string, std::int64_t> score;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& t : tallies) {
        if (t.wins_a < 0 || t.wins_b < 0 || t.ties < 0) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("negative count in tally {} vs {}", t.model_a, t.model_b));
        }
        if (t.model_a == t.model_b) {
            fail(ErrorKind::invalid_argument, fmt::format("model '{}' compared with itself", t.model_a));
        }
        auto key = std::minmax(t.model_a, t.model_b);
        if (!seen.emplace(key.first, key.second).second) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("pair {} vs {} appears more than once", t.model_a, t.model_b));
        }
        score[t.model_a] += t.wins_a - t.wins_b;
        score[t.model_b] += t.wins_b - t.wins_a;
    }
    std::vector<std::string> models;
    for (const auto& [m, _] : score) models.push_back(m);
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            if (!seen.count({models[i], models[j]})) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("missing comparison between '{}' and '{}'", models[i], models[j]));
            }
        }
    }
    if (models.empty()) fail(ErrorKind::invalid_argument, "no tallies given");
    std::vector<double> s;
    for (const auto& m : models) s.push_back(static_cast<double>(score[m]));
    return ranking_from_scores(models, s, true);
}

json AgreementReport::to_json() const {
    return {{"n", n}, {"spearman", spearman}, {"kendall_tau_b", kendall}, {"rmse", rmse}, {"mae", mae}};
}

AgreementReport compare_rankings(const RankedList& predicted, const RankedList& reference, RmseForm form) {
    const auto pairs = align(predicted, reference);
    std::vector<double> p, r;
    for (const auto& [a, b] : pairs) {
        p.push_back(a);
        r.push_back(b);
    }
    AgreementReport rep;
    rep.n = pairs.size();
    rep.spearman = spearman(p, r);
    rep.kendall = kendall_tau_b(p, r);
    rep.rmse = rmse(predicted, reference, form);
    rep.mae = mae(predicted, reference);
    return rep;
}

AgreementReport aggregate_agreement(std::span<const AgreementReport> reports) {
    if (reports.empty()) fail(ErrorKind::invalid_argument, "no agreement reports to aggregate");
    AgreementReport out;
    const auto k = static_cast<double>(reports.size());
    double n = 0.0;
    for (const auto& r : reports) {
        n += static_cast<double>(r.n);
        out.spearman += r.spearman;
        out.kendall += r.kendall;
        out.rmse += r.rmse;
        out.mae += r.mae;
    }
    out.n = static_cast<std::size_t>(std::llround(n / k));
    out.spearman /= k;
    out.kendall /= k;
    out.rmse /= k;
    out.mae /= k;
    return out;
}

}  // namespace feel
