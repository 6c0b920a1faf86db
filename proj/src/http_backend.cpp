#include <cstdlib>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>

#include "feel/judge.hpp"
#include "feel/mock_judge.hpp"
#include "feel/rng.hpp"

namespace feel {

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        fail(ErrorKind::invalid_argument, fmt::format("endpoint '{}' is not an http(s) URL", url));
    }
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

std::string read_credential(const JudgeConfig& cfg) {
    if (cfg.credential_env.empty()) return {};
    const char* value = std::getenv(cfg.credential_env.c_str());
    if (value == nullptr || *value == '\0') {
        throw BackendError(FailureClass::auth,
                           fmt::format("judge '{}': environment variable {} is not set",
                                       cfg.judge_id, cfg.credential_env));
    }
    return value;
}

FailureClass classify_status(int status) {
    if (status == 401 || status == 403) return FailureClass::auth;
    if (status == 429) return FailureClass::rate_limited;
    if (status == 408) return FailureClass::timeout;
    if (status >= 500) return FailureClass::transient;
    return FailureClass::rejected;
}

/// Shared transport: one POST of a JSON body, with status classification.
class HttpJsonBackend : public Backend {
public:
    explicit HttpJsonBackend(JudgeConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {}

protected:
    json post(const std::string& path, const json& body, const httplib::Headers& headers) {
        httplib::Client client(url_.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            const auto err = res.error();
            const auto cls = err == httplib::Error::Read || err == httplib::Error::Write ||
                                     err == httplib::Error::ConnectionTimeout
                                 ? FailureClass::timeout
                                 : FailureClass::transient;
            throw BackendError(cls, fmt::format("judge '{}': request failed: {}", cfg_.judge_id,
                                                httplib::to_string(err)));
        }
        if (res->status < 200 || res->status >= 300) {
            throw BackendError(classify_status(res->status),
                               fmt::format("judge '{}': HTTP {}: {}", cfg_.judge_id, res->status,
                                           res->body.substr(0, 200)));
        }
        try {
            return json::parse(res->body);
        } catch (const json::parse_error&) {
            throw BackendError(FailureClass::transient,
                               fmt::format("judge '{}': response is not JSON", cfg_.judge_id));
        }
    }

    json base_body(const std::string& prompt) const {
        json body = cfg_.params.is_object() ? cfg_.params : json::object();
        body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
        return body;
    }

    JudgeConfig cfg_;
    ParsedUrl url_;
};

/// OpenAI chat-completions wire format (also spoken by GLM-4 and most
/// compatible gateways).
class OpenAiBackend final : public HttpJsonBackend {
public:
    using HttpJsonBackend::HttpJsonBackend;

    std::string complete(const std::string& prompt) override {
        const auto key = read_credential(cfg_);
        json body = base_body(prompt);
        if (!cfg_.model.empty()) body["model"] = cfg_.model;
        httplib::Headers headers;
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        const auto reply = post(url_.path, body, headers);
        try {
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw BackendError(FailureClass::transient,
                               fmt::format("judge '{}': unexpected response shape", cfg_.judge_id));
        }
    }
};

/// Baidu Qianfan chat endpoint: access token as a query parameter, reply in
/// `result`, errors reported in-band via `error_code`.
class ErnieBackend final : public HttpJsonBackend {
public:
    using HttpJsonBackend::HttpJsonBackend;

    std::string complete(const std::string& prompt) override {
        const auto key = read_credential(cfg_);
        const auto sep = url_.path.find('?') == std::string::npos ? '?' : '&';
        const auto path = key.empty() ? url_.path : fmt::format("{}{}access_token={}", url_.path, sep, key);
        const auto reply = post(path, base_body(prompt), {});
        if (reply.contains("error_code")) {
            const auto code = reply["error_code"].get<int>();
            const auto msg = reply.value("error_msg", std::string());
            FailureClass cls = FailureClass::transient;
            if (code == 110 || code == 111 || code == 14 || code == 6) cls = FailureClass::auth;
            if (code == 4 || code == 17 || code == 18 || code == 336501 || code == 336502) {
                cls = FailureClass::rate_limited;
            }
            throw BackendError(cls, fmt::format("judge '{}': error {}: {}", cfg_.judge_id, code, msg));
        }
        if (!reply.contains("result") || !reply["result"].is_string()) {
            throw BackendError(FailureClass::transient,
                               fmt::format("judge '{}': unexpected response shape", cfg_.judge_id));
        }
        return reply["result"].get<std::string>();
    }
};

}  // namespace

std::shared_ptr<Backend> make_backend(const JudgeConfig& cfg, std::uint64_t seed) {
    if (cfg.provider == "mock") return make_mock_backend(cfg.scenario, derive_seed(seed, fnv1a64(cfg.judge_id)));
    if (cfg.provider == "openai") return std::make_shared<OpenAiBackend>(cfg);
    if (cfg.provider == "ernie") return std::make_shared<ErnieBackend>(cfg);
    fail(ErrorKind::invalid_argument, fmt::format("unknown judge provider '{}'", cfg.provider));
}

}  // namespace feel
