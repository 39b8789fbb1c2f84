#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ttcw/registry.h"
#include "ttcw/util.h"

namespace ttcw {

/// Who wrote a story: the human expert, or a model identified by a free
/// string ("gpt-4", "claude-v1.3"). Serialized as "human" or the model id.
class Source {
public:
    static Source human() { return Source(); }
    static Source model(std::string id);
    /// Throws ValidationError on an empty label.
    static Source parse(std::string_view label);

    bool is_human() const { return model_.empty(); }
    const std::string& model_id() const { return model_; }
    std::string label() const { return is_human() ? std::string(kHumanLabel) : model_; }

    bool operator==(const Source&) const = default;
    auto operator<=>(const Source& o) const { return label() <=> o.label(); }

    static constexpr std::string_view kHumanLabel = "human";

private:
    Source() = default;
    std::string model_;
};

struct Plot {
    std::string id;
    std::string text;
    std::optional<std::string> source_story_id;
    bool verified = false;

    bool operator==(const Plot&) const = default;
};

struct Story {
    std::string id;
    std::optional<std::string> title;
    std::string text;
    Source source = Source::human();
    std::string plot_id;
    std::size_t word_count = 0;
    Timestamp created_at{};
    std::optional<std::string> group_id;
    /// Machine stories only: whether length generation converged.
    std::optional<bool> converged;

    bool operator==(const Story&) const = default;
};

/// Builds a Story with word_count derived from text.
Story make_story(std::string id, std::string text, Source source, std::string plot_id);

struct StoryGroup {
    std::string id;
    std::string plot_id;
    std::vector<std::string> story_ids;  // file order; always 4
    std::string human_story_id;

    bool operator==(const StoryGroup&) const = default;
};

struct Assessment {
    std::string rater_id;
    std::string story_id;
    std::string test_id;
    Verdict verdict = Verdict::No;
    std::string rationale;
    Timestamp recorded_at{};
    Timestamp last_edited_at{};

    bool operator==(const Assessment&) const = default;
};

inline constexpr std::size_t kGroupSize = 4;
inline constexpr std::size_t kDefaultWordTolerance = 200;

/// Number of maximal runs of non-whitespace code points. Whitespace is the
/// Unicode White_Space set (ASCII space/controls, NBSP, U+2000..U+200A, ...).
std::size_t word_count(std::string_view text);

struct WordRange {
    std::size_t min = 1000;
    std::size_t max = 2400;
};

struct StoryImport {
    std::vector<Story> stories;
    std::vector<StoryGroup> groups;
};

/// Parses a story file and assembles groups from each record's group_id.
/// Validates: unique ids, nonempty text, stated word_count matches the text,
/// 4 stories per group with exactly one human story and a shared plot, and
/// converged machine stories within `tolerance` words of the human story.
StoryImport parse_stories(std::string_view jsonl, std::string_view origin = "<stories>",
                          std::size_t tolerance = kDefaultWordTolerance);
StoryImport import_stories(const std::filesystem::path& path, std::size_t tolerance = kDefaultWordTolerance);
std::string stories_to_jsonl(const std::vector<Story>& stories);
void export_stories(const std::vector<Story>& stories, const std::filesystem::path& path);

/// Human stories whose length falls outside `range`, one message per story.
std::vector<std::string> check_human_lengths(const std::vector<Story>& stories, WordRange range);

std::vector<Plot> parse_plots(std::string_view jsonl, std::string_view origin = "<plots>");
std::vector<Plot> import_plots(const std::filesystem::path& path);
void export_plots(const std::vector<Plot>& plots, const std::filesystem::path& path);

enum class AssessmentFormat { Jsonl, Csv };

/// .csv selects Csv; everything else is Jsonl.
AssessmentFormat format_for(const std::filesystem::path& path);

struct AssessmentCheck {
    const Catalog* catalog = &Catalog::builtin();
    /// When set, every story_id must be in this set.
    const std::set<std::string, std::less<>>* known_stories = nullptr;
};

/// Validates test ids, rationale presence and (rater, story, test)
/// uniqueness. Errors carry "<origin>:<line>".
std::vector<Assessment> parse_assessments(std::string_view text, AssessmentFormat format,
                                          std::string_view origin = "<assessments>", AssessmentCheck check = {});
std::vector<Assessment> import_assessments(const std::filesystem::path& path, AssessmentCheck check = {});
std::string assessments_to_string(const std::vector<Assessment>& assessments, AssessmentFormat format);
void export_assessments(const std::vector<Assessment>& assessments, const std::filesystem::path& path,
                        AssessmentFormat format);

/// File layout of a corpus directory.
struct CorpusPaths {
    std::filesystem::path root;

    std::filesystem::path stories() const { return root / "stories.jsonl"; }
    std::filesystem::path plots() const { return root / "plots.jsonl"; }
    std::filesystem::path assessments() const { return root / "assessments.jsonl"; }
    std::filesystem::path sessions() const { return root / "sessions.jsonl"; }
    std::filesystem::path plan() const { return root / "plan.json"; }
    std::filesystem::path traces() const { return root / "traces.jsonl"; }
};

}  // namespace ttcw
