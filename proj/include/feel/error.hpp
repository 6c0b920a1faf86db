#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace feel {

/// Broad failure classes. The service maps these onto HTTP status codes,
/// the CLI onto exit codes.
enum class ErrorKind {
    invalid_argument,  // precondition / validation failure
    not_found,
    conflict,          // duplicate submission, wrong round, state clash
    parse,             // malformed input text or record
    io,
    judge,             // backend failure after retries
    auth,              // non-retryable authentication failure
    missing_score,     // too few successful rounds
    unauthorized,      // service token mismatch
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Carries a list of per-item diagnostics (per-record, per-field).
class DiagnosticError : public Error {
public:
    DiagnosticError(ErrorKind kind, const std::string& summary, std::vector<std::string> details);

    const std::vector<std::string>& details() const noexcept { return details_; }

private:
    std::vector<std::string> details_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace feel
