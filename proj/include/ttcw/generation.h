#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttcw/corpus.h"
#include "ttcw/llm_client.h"

namespace ttcw {

enum class PromptKind { Initial, Expand };

std::string_view to_string(PromptKind k);

struct GenerationStep {
    PromptKind kind = PromptKind::Initial;
    std::size_t word_count_after = 0;

    bool operator==(const GenerationStep&) const = default;
};

struct GenerationTrace {
    std::string plot_id;
    std::string model_name;
    std::size_t target_words = 0;
    std::vector<GenerationStep> iterations;
    bool converged = false;
    /// Stopped because a rewrite came back at least `tolerance` words too long.
    bool overlong = false;
    std::vector<std::string> warnings;
};

struct GenerationConfig {
    std::size_t tolerance = kDefaultWordTolerance;
    std::size_t max_iterations = 20;
    /// When false, drafts may be generated from plots nobody has reviewed.
    bool require_verified_plot = true;
};

/// Client failure or empty completion inside the length loop. Carries the
/// trace up to the failure.
class GenerationFailure : public GenerationError {
public:
    GenerationFailure(const std::string& what, GenerationTrace partial)
        : GenerationError(what), partial_(std::move(partial)) {}
    const GenerationTrace& partial_trace() const { return partial_; }

private:
    GenerationTrace partial_;
};

struct PlotDraft {
    Plot plot;
    /// The model returned more than one sentence; kept for human review.
    bool needs_review = false;
};

/// Asks the model for a one-sentence plot summary of `story`; the plot is
/// returned unverified.
PlotDraft summarize_plot(const Story& story, std::string plot_id, LlmClient& client, const GenParams& params);

/// Human sign-off on a summarized plot. Text is unchanged.
Plot verify_plot(Plot plot);

std::string build_initial_prompt(const Plot& plot, std::size_t target_words);

/// Throws PreconditionError unless current_words < target_words.
std::string build_expansion_prompt(std::string_view current_story_text, std::size_t target_words,
                                   std::size_t current_words);

/// Drops a leading "Here's the story ..."-style line. Returns true if a line
/// was removed.
bool strip_preamble(std::string& text);

struct GeneratedStory {
    Story story;
    GenerationTrace trace;
};

/// Initial prompt, then expansion rewrites of the latest text until the word
/// count is within `tolerance` of `target_words` or `max_iterations`
/// completions have been issued. A rewrite that overshoots by `tolerance` or
/// more stops the loop and is flagged, never truncated.
GeneratedStory generate_story(const Plot& plot, std::size_t target_words, LlmClient& client,
                              const GenParams& params, const GenerationConfig& config = {});

/// One JSON object per line, for the corpus traces file.
std::string trace_to_json(const GenerationTrace& trace);

}  // namespace ttcw
