#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace feel {

enum class Aspect {
    informativeness,
    comprehensibility,
    helpfulness,
    consistency,
    coherence,
    safety,
};

enum class Dimension { emotional_support_skill, text_quality };

inline constexpr std::size_t kAspectCount = 6;

inline constexpr std::array<Aspect, kAspectCount> kAllAspects = {
    Aspect::informativeness, Aspect::comprehensibility, Aspect::helpfulness,
    Aspect::consistency,     Aspect::coherence,         Aspect::safety,
};

/// Lower-case identifier used in files and on the wire ("informativeness").
std::string_view aspect_name(Aspect aspect);
/// Capitalized label used inside prompts ("Informativeness").
std::string_view aspect_title(Aspect aspect);
Dimension dimension_of(Aspect aspect);
std::string_view dimension_name(Dimension dimension);
/// Built-in one-sentence criterion describing what the aspect measures.
std::string_view default_criterion(Aspect aspect);

std::optional<Aspect> try_parse_aspect(std::string_view name);
/// Throws Error(invalid_argument) for unknown names.
Aspect parse_aspect(std::string_view name);

inline std::size_t index_of(Aspect aspect) { return static_cast<std::size_t>(aspect); }

/// A score on the four-band 0..3 scale; may be fractional.
class LikertScore {
public:
    static constexpr double kMin = 0.0;
    static constexpr double kMax = 3.0;

    /// Throws Error(invalid_argument) when value is outside [0, 3] or not finite.
    explicit LikertScore(double value);

    double value() const noexcept { return value_; }

    friend bool operator==(LikertScore, LikertScore) = default;

private:
    double value_;
};

}  // namespace feel
