#include "feel/prompting.hpp"

#include <algorithm>
#include <mutex>
#include <regex>

#include <fmt/format.h>

#include "feel/error.hpp"

namespace feel {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 4> kBandLabels = {"0 points:", "1 point:", "2 points:",
                                                          "3 points:"};

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string criterion_block(const PromptTemplate& t, Aspect a) {
    return fmt::format("Evaluation Criteria:\n\n{}: {}", aspect_title(a), t.criterion(a));
}

}  // namespace

PromptTemplate PromptTemplate::create(std::string version, std::string task_spec,
                                      std::map<Aspect, std::string> criteria,
                                      std::string output_format, std::string cot_request_suffix) {
    std::vector<std::string> problems;
    if (trim(version).empty()) problems.emplace_back("version is empty");
    if (trim(task_spec).empty()) problems.emplace_back("task_spec is empty");
    if (trim(output_format).empty()) problems.emplace_back("output_format is empty");
    if (trim(cot_request_suffix).empty()) problems.emplace_back("cot_request_suffix is empty");
    for (auto label : kBandLabels) {
        if (output_format.find(label) == std::string::npos) {
            problems.push_back(fmt::format("output_format lacks band label \"{}\"", label));
        }
    }
    PromptTemplate t;
    for (Aspect a : kAllAspects) {
        auto it = criteria.find(a);
        if (it == criteria.end() || trim(it->second).empty()) {
            problems.push_back(fmt::format("criterion for {} is empty", aspect_name(a)));
        } else {
            t.criteria_[index_of(a)] = std::string(trim(it->second));
        }
    }
    if (!problems.empty()) {
        throw DiagnosticError(ErrorKind::invalid_argument, "invalid prompt template", std::move(problems));
    }
    t.version_ = std::string(trim(version));
    t.task_spec_ = std::string(trim(task_spec));
    t.output_format_ = std::string(trim(output_format));
    t.cot_request_suffix_ = std::string(trim(cot_request_suffix));
    return t;
}

const PromptTemplate& PromptTemplate::builtin() {
    static const PromptTemplate t = [] {
        std::map<Aspect, std::string> criteria;
        for (Aspect a : kAllAspects) criteria[a] = std::string(default_criterion(a));
        return create(
            "feel-v1",
            "Act as a psychologist experienced in emotional support work. You are given a "
            "conversation between a help seeker, who is looking for support, and a supporter, "
            "who is offering it. Rate how well the supporter performs on the single aspect "
            "described below, using a scale from 0 (very poor) to 3 (excellent).",
            std::move(criteria),
            "Answer format (give the probability of each score band; the four probabilities "
            "must sum to 1):\n\n- {aspect} Score:\n0 points:\n1 point:\n2 points:\n3 points:",
            "Write the numbered steps you would follow to evaluate this aspect.\n\n"
            "Evaluation Steps:");
    }();
    return t;
}

std::string PromptTemplate::fingerprint() const {
    std::string all = task_spec_;
    for (Aspect a : kAllAspects) {
        all += '\x1e';
        all += criteria_[index_of(a)];
    }
    all += '\x1e';
    all += output_format_;
    all += '\x1e';
    all += cot_request_suffix_;
    return sha256_hex(all);
}

PromptTemplate PromptTemplate::load(const fs::path& root, std::string_view version) {
    const auto dir = root / std::string(version);
    if (!fs::is_directory(dir)) {
        fail(ErrorKind::not_found, fmt::format("template directory '{}' not found", dir.string()));
    }
    std::map<Aspect, std::string> criteria;
    for (Aspect a : kAllAspects) {
        criteria[a] = read_file(dir / "criteria" / fmt::format("{}.txt", aspect_name(a)));
    }
    auto t = create(std::string(version), read_file(dir / "task.txt"), std::move(criteria),
                    read_file(dir / "output_format.txt"), read_file(dir / "cot_request.txt"));
    if (fs::exists(dir / "CHECKSUM")) {
        const auto expected = std::string(trim(read_file(dir / "CHECKSUM")));
        if (expected != t.fingerprint()) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("template '{}' texts do not match its CHECKSUM; bump the version "
                             "when changing prompt text",
                             version));
        }
    }
    return t;
}

void PromptTemplate::save(const fs::path& root) const {
    const auto dir = root / version_;
    write_file(dir / "task.txt", task_spec_ + "\n");
    write_file(dir / "output_format.txt", output_format_ + "\n");
    write_file(dir / "cot_request.txt", cot_request_suffix_ + "\n");
    for (Aspect a : kAllAspects) {
        write_file(dir / "criteria" / fmt::format("{}.txt", aspect_name(a)), criteria_[index_of(a)] + "\n");
    }
    write_file(dir / "CHECKSUM", fingerprint() + "\n");
}

// --- CoT -------------------------------------------------------------------

json CotSteps::to_json() const {
    return {{"judge", judge_id},
            {"aspect", aspect_name(aspect)},
            {"template_version", template_version},
            {"steps", steps}};
}

CotSteps CotSteps::from_json(const json& j) {
    CotSteps c{parse_aspect(j.at("aspect").get<std::string>()), j.at("judge").get<std::string>(),
               j.at("template_version").get<std::string>(),
               j.at("steps").get<std::vector<std::string>>()};
    if (c.steps.empty()) fail(ErrorKind::parse, "cached CoT entry has no steps");
    return c;
}

std::string build_cot_request(const PromptTemplate& t, Aspect a) {
    return fmt::format("{}\n\n{}\n\n{}", t.task_spec(), criterion_block(t, a), t.cot_request_suffix());
}

std::vector<std::string> parse_cot_response(std::string_view raw) {
    static const std::regex marker(R"(^\s*(?:\d{1,3}\s*[.):]|[-*]|\xE2\x80\xA2)\s+(.*\S)\s*$)");
    static const std::regex filler(R"(^(?:\s|\.|\xE2\x80\xA6)*$)");
    std::vector<std::string> steps;
    for (const auto& line : split(raw, '\n')) {
        const std::string clean(trim(line));
        if (clean.empty() || std::regex_match(clean, filler)) continue;
        std::smatch m;
        if (std::regex_match(clean, m, marker)) {
            steps.push_back(m[1].str());
        } else if (!steps.empty()) {
            steps.back() += ' ';
            steps.back() += clean;
        }
    }
    if (steps.empty()) fail(ErrorKind::parse, "no enumerable steps in CoT reply");
    return steps;
}

std::string render_transcript(const Dialogue& d) {
    std::string out;
    for (const auto& turn : d.turns) {
        if (!out.empty()) out += '\n';
        std::string text(trim(turn.text));
        std::replace(text.begin(), text.end(), '\r', ' ');
        std::replace(text.begin(), text.end(), '\n', ' ');
        out += turn.role == Role::seeker ? "Seeker: " : "Supporter: ";
        out += text;
    }
    return out;
}

std::string build_evaluation_prompt(const PromptTemplate& t, Aspect a, const CotSteps& cot,
                                    const Dialogue& d, const PromptOptions& options) {
    if (cot.aspect != a) {
        fail(ErrorKind::invalid_argument,
             fmt::format("CoT was generated for {}, not {}", aspect_name(cot.aspect), aspect_name(a)));
    }
    if (cot.template_version != t.version()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("CoT template version '{}' does not match template '{}'",
                         cot.template_version, t.version()));
    }
    std::string steps;
    for (std::size_t i = 0; i < cot.steps.size(); ++i) {
        steps += fmt::format("{}. {}\n", i + 1, cot.steps[i]);
    }
    std::string dialogue = "Dialogue:\n";
    if (options.include_topic && d.topic) dialogue += fmt::format("Topic: {}\n", *d.topic);
    dialogue += render_transcript(d);
    return fmt::format("{}\n\n{}\n\nEvaluation Steps:\n{}\n{}\n\n{}\n", t.task_spec(),
                       criterion_block(t, a), steps, dialogue,
                       replace_all(t.output_format(), kAspectPlaceholder, aspect_title(a)));
}

// --- cache -----------------------------------------------------------------

CotCache::CotCache(fs::path file) : file_(std::move(file)) {
    if (fs::exists(*file_)) {
        for_each_jsonl(*file_, [&](std::size_t line, const json& j) {
            try {
                auto c = CotSteps::from_json(j);
                Key key{c.judge_id, c.aspect, c.template_version};
                entries_.insert_or_assign(std::move(key), std::move(c));
            } catch (const std::exception& e) {
                fail(ErrorKind::parse, fmt::format("{}:{}: bad CoT cache entry: {}", file_->string(), line, e.what()));
            }
        });
    }
}

std::optional<CotSteps> CotCache::find(std::string_view judge_id, Aspect aspect,
                                       std::string_view template_version) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(Key{std::string(judge_id), aspect, std::string(template_version)});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void CotCache::store(const CotSteps& steps) {
    if (steps.steps.empty()) fail(ErrorKind::invalid_argument, "CoT must have at least one step");
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(Key{steps.judge_id, steps.aspect, steps.template_version}, steps);
    if (file_) append_line(*file_, dump_compact(steps.to_json()));
}

std::size_t CotCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

CotSteps get_or_generate_cot(CotCache& cache, JudgeClient& judge, const PromptTemplate& t,
                             Aspect aspect, bool regenerate) {
    if (!regenerate) {
        if (auto hit = cache.find(judge.id(), aspect, t.version())) return *hit;
    }
    const auto reply = judge.complete(build_cot_request(t, aspect));
    CotSteps steps{aspect, judge.id(), t.version(), parse_cot_response(reply.text)};
    cache.store(steps);
    return steps;
}

}  // namespace feel
