#pragma once

#include <chrono>
#include <mutex>
#include <string>

namespace feel {

/// Time source used by judge clients for backoff, rate limiting, latency and
/// audit timestamps. Mock judges run on a ManualClock so runs are reproducible.
class Clock {
public:
    using duration = std::chrono::nanoseconds;
    using time_point = std::chrono::time_point<std::chrono::system_clock, duration>;

    virtual ~Clock() = default;
    virtual time_point now() = 0;
    virtual void sleep_for(duration d) = 0;
};

class SystemClock final : public Clock {
public:
    time_point now() override;
    void sleep_for(duration d) override;
};

/// Simulated time: sleep_for advances now() instantly.
class ManualClock final : public Clock {
public:
    explicit ManualClock(time_point start = time_point{}) : now_(start) {}

    time_point now() override;
    void sleep_for(duration d) override;
    void advance(duration d) { sleep_for(d); }

private:
    std::mutex mutex_;
    time_point now_;
};

/// ISO-8601 UTC with millisecond precision, e.g. "2024-02-26T00:00:00.000Z".
std::string format_timestamp(Clock::time_point tp);

}  // namespace feel
