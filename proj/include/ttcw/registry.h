#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ttcw {

class LlmClient;
struct GenParams;

enum class Dimension { Fluency, Flexibility, Originality, Elaboration };

inline constexpr std::array<Dimension, 4> kAllDimensions = {
    Dimension::Fluency, Dimension::Flexibility, Dimension::Originality, Dimension::Elaboration};

std::string_view to_string(Dimension d);
std::optional<Dimension> parse_dimension(std::string_view s);

enum class Verdict { Yes, No };

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict_label(std::string_view s);

struct TtcwTest {
    std::string id;
    Dimension dimension = Dimension::Fluency;
    std::string name;
    std::string question;
    std::string expanded_measure;
    std::string llm_elicitation;
    bool verified = false;

    bool operator==(const TtcwTest&) const = default;
};

/// Immutable, ordered set of tests. Construction validates the record set;
/// afterwards every accessor is const and safe to share across threads.
class Catalog {
public:
    /// Parses line-delimited JSON records. Blank lines are skipped.
    /// `origin` is used in error messages ("<origin>:<line>").
    static Catalog parse(std::string_view jsonl, std::string_view origin = "<catalog>");
    static Catalog load(const std::filesystem::path& path);

    /// The 14 canonical tests shipped with the library.
    static const Catalog& builtin();

    const std::vector<TtcwTest>& tests() const { return tests_; }
    std::size_t size() const { return tests_.size(); }

    const TtcwTest* find(std::string_view id) const;
    const TtcwTest& at(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    std::string to_jsonl() const;

private:
    explicit Catalog(std::vector<TtcwTest> tests);
    std::vector<TtcwTest> tests_;
};

/// Tests of the builtin catalog in canonical order: Fluency 1-5,
/// Flexibility 1-3, Originality 1-3, Elaboration 1-3.
const std::vector<TtcwTest>& all_tests();

std::string render_human_instruction(const TtcwTest& test);

/// Throws PreconditionError if story_text is empty.
std::string render_llm_instruction(const TtcwTest& test, std::string_view story_text);

inline constexpr std::string_view kExpandMeasurePrefix =
    "What do creative experts mean when they say the following: ";

struct MeasureDraft {
    std::string text;
    bool verified = false;
};

/// Asks a model to elaborate an expert question. The draft stays unverified
/// until a human reviews it.
MeasureDraft expand_measure(std::string_view question, LlmClient& client, const GenParams& params);

}  // namespace ttcw
