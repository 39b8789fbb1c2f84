#include "ttcw/generation.h"

#include <algorithm>
#include <cctype>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ttcw/errors.h"

namespace ttcw {

std::string_view to_string(PromptKind k) { return k == PromptKind::Initial ? "Initial" : "Expand"; }

namespace {

constexpr std::string_view kNoPreamble =
    "Directly start with the story, do not say things like 'Here's the story [...]:'";

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Sentence ends followed by more text. Abbreviations will over-count; that
// only causes a review flag.
std::size_t sentence_count(std::string_view text) {
    text = trim(text);
    if (text.empty()) {
        return 0;
    }
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        const char c = text[i];
        if ((c == '.' || c == '!' || c == '?') && std::isspace(static_cast<unsigned char>(text[i + 1]))) {
            auto rest = trim(text.substr(i + 1));
            if (!rest.empty()) {
                ++n;
            }
        }
    }
    return n;
}

std::size_t diff(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

PlotDraft summarize_plot(const Story& story, std::string plot_id, LlmClient& client, const GenParams& params) {
    if (trim(story.text).empty()) {
        throw PreconditionError("summarize_plot: story text is empty");
    }
    std::string prompt = "Summarize the plot of the following story in a single sentence.\n\nStory: ";
    prompt += story.text;
    auto reply = std::string(trim(client.complete(prompt, params)));
    if (reply.empty()) {
        throw GenerationError("summarize_plot: empty completion for story " + story.id);
    }
    PlotDraft draft;
    draft.needs_review = sentence_count(reply) > 1;
    if (draft.needs_review) {
        spdlog::warn("plot summary for story {} has more than one sentence; flagged for review", story.id);
    }
    draft.plot = Plot{std::move(plot_id), std::move(reply), story.id, false};
    return draft;
}

Plot verify_plot(Plot plot) {
    plot.verified = true;
    return plot;
}

std::string build_initial_prompt(const Plot& plot, std::size_t target_words) {
    std::string out = "Write a New Yorker-style story given the plot below. Make sure it is atleast ";
    out += std::to_string(target_words);
    out += " words. ";
    out += kNoPreamble;
    out += "\n\nPlot: ";
    out += plot.text;
    return out;
}

std::string build_expansion_prompt(std::string_view current_story_text, std::size_t target_words,
                                   std::size_t current_words) {
    if (current_words >= target_words) {
        throw PreconditionError("build_expansion_prompt: story already has " + std::to_string(current_words) +
                                " words, target is " + std::to_string(target_words));
    }
    const auto target = std::to_string(target_words);
    std::string out = "You wrote the story I gave you below. I requested a story with ";
    out += target;
    out += " words, but the story only has ";
    out += std::to_string(current_words);
    out += " words. Can you rewrite the story to make it longer, and closer to the ";
    out += target;
    out += " word target I gave you. ";
    out += kNoPreamble;
    out += "\n\nCurrent story: ";
    out += current_story_text;
    return out;
}

bool strip_preamble(std::string& text) {
    const auto start = text.find_first_not_of(" \t\r\n");
    if (start == std::string::npos) {
        return false;
    }
    const auto eol = text.find('\n', start);
    if (eol == std::string::npos) {
        return false;
    }
    const auto first = lower(trim(std::string_view(text).substr(start, eol - start)));
    const bool opener = first.starts_with("here's") || first.starts_with("here is") ||
                        first.starts_with("here\xe2\x80\x99s") || first.starts_with("sure") ||
                        first.starts_with("certainly");
    const bool mentions = first.find("story") != std::string::npos || first.find("rewrite") != std::string::npos ||
                          first.find("version") != std::string::npos;
    if (!(opener && (first.ends_with(":") || mentions))) {
        return false;
    }
    auto rest = trim(std::string_view(text).substr(eol + 1));
    if (rest.empty()) {
        return false;
    }
    text = std::string(rest);
    return true;
}

GeneratedStory generate_story(const Plot& plot, std::size_t target_words, LlmClient& client,
                              const GenParams& params, const GenerationConfig& config) {
    if (target_words == 0) {
        throw PreconditionError("generate_story: target_words must be positive");
    }
    if (config.max_iterations == 0 || config.tolerance == 0) {
        throw PreconditionError("generate_story: tolerance and iteration cap must be positive");
    }
    if (config.require_verified_plot && !plot.verified) {
        throw PreconditionError("generate_story: plot " + plot.id + " is not verified");
    }
    if (params.model_name.empty()) {
        throw PreconditionError("generate_story: model name is empty");
    }

    GenerationTrace trace;
    trace.plot_id = plot.id;
    trace.model_name = params.model_name;
    trace.target_words = target_words;

    std::string text;
    std::size_t words = 0;
    auto issue = [&](PromptKind kind, const std::string& prompt) {
        std::string reply;
        try {
            reply = client.complete(prompt, params);
        } catch (const ClientError& e) {
            throw GenerationFailure(std::string("generation for plot ") + plot.id + " failed: " + e.what(), trace);
        }
        if (strip_preamble(reply)) {
            trace.warnings.push_back("stripped preamble line at iteration " +
                                     std::to_string(trace.iterations.size() + 1));
            spdlog::info("plot {} / {}: {}", plot.id, params.model_name, trace.warnings.back());
        }
        if (trim(reply).empty()) {
            throw GenerationFailure("empty completion for plot " + plot.id, trace);
        }
        text = std::move(reply);
        words = word_count(text);
        trace.iterations.push_back({kind, words});
    };

    issue(PromptKind::Initial, build_initial_prompt(plot, target_words));
    while (diff(words, target_words) >= config.tolerance && trace.iterations.size() < config.max_iterations) {
        if (words >= target_words + config.tolerance) {
            trace.overlong = true;
            trace.warnings.push_back("story overshot the target by " + std::to_string(words - target_words) +
                                     " words; stopping without truncation");
            spdlog::warn("plot {} / {}: {}", plot.id, params.model_name, trace.warnings.back());
            break;
        }
        issue(PromptKind::Expand, build_expansion_prompt(text, target_words, words));
    }
    trace.converged = diff(words, target_words) < config.tolerance;
    if (!trace.converged && !trace.overlong) {
        trace.warnings.push_back("no convergence after " + std::to_string(trace.iterations.size()) +
                                 " iterations; final length " + std::to_string(words) + " vs target " +
                                 std::to_string(target_words));
        spdlog::warn("plot {} / {}: {}", plot.id, params.model_name, trace.warnings.back());
    }

    Story story = make_story(plot.id + "--" + params.model_name, std::move(text), Source::model(params.model_name),
                             plot.id);
    story.converged = trace.converged;
    return {std::move(story), std::move(trace)};
}

std::string trace_to_json(const GenerationTrace& trace) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : trace.iterations) {
        steps.push_back({{"prompt_kind", to_string(step.kind)}, {"word_count_after", step.word_count_after}});
    }
    nlohmann::json j = {{"plot_id", trace.plot_id},       {"model_name", trace.model_name},
                        {"target_words", trace.target_words}, {"iterations", steps},
                        {"converged", trace.converged},   {"overlong", trace.overlong},
                        {"warnings", trace.warnings}};
    return j.dump();
}

}  // namespace ttcw
