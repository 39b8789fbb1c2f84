#include "ttcw/assessor.h"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <mutex>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ttcw/errors.h"
#include "ttcw/util.h"

namespace ttcw {

using json = nlohmann::json;

namespace {

struct Token {
    std::size_t begin = 0;
    std::size_t end = 0;
    Verdict verdict = Verdict::No;
};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::vector<Token> verdict_tokens(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_word_char(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_word_char(text[j])) {
            ++j;
        }
        const auto word = text.substr(i, j - i);
        if (iequals(word, "yes")) {
            out.push_back({i, j, Verdict::Yes});
        } else if (iequals(word, "no")) {
            out.push_back({i, j, Verdict::No});
        }
        i = j;
    }
    return out;
}

// Offsets at which each non-empty line starts.
std::vector<std::size_t> nonempty_line_starts(std::string_view text) {
    std::vector<std::size_t> starts;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            eol = text.size();
        }
        if (!trim(text.substr(pos, eol - pos)).empty()) {
            starts.push_back(pos);
        }
        pos = eol + 1;
    }
    return starts;
}

std::string_view strip_answer_label(std::string_view s) {
    auto strip_marks = [](std::string_view v) {
        while (!v.empty() && (std::isspace(static_cast<unsigned char>(v.back())) || v.back() == ':' ||
                              v.back() == '*' || v.back() == '#' || v.back() == '-' || v.back() == '_' ||
                              v.back() == '(' || v.back() == '"' || v.back() == '\'')) {
            v.remove_suffix(1);
        }
        return v;
    };
    s = strip_marks(s);
    for (std::string_view label : {"final answer", "answer", "verdict", "a)"}) {
        if (s.size() >= label.size() && iequals(s.substr(s.size() - label.size()), label)) {
            const auto before = s.size() - label.size();
            if (before == 0 || !is_word_char(s[before - 1])) {
                s = strip_marks(s.substr(0, before));
                break;
            }
        }
    }
    return trim(s);
}

// Re-throws the in-flight client error as the same failure kind with a prefix.
[[noreturn]] void rethrow_with_context(const std::string& prefix) {
    try {
        throw;
    } catch (const AuthError& e) {
        throw AuthError(prefix + e.what());
    } catch (const QuotaError& e) {
        throw QuotaError(prefix + e.what());
    } catch (const TruncationError& e) {
        throw TruncationError(prefix + e.what());
    } catch (const TransportError& e) {
        throw TransportError(prefix + e.what());
    } catch (const ClientError& e) {
        throw ClientError(prefix + e.what());
    }
}

}  // namespace

ParsedVerdict parse_verdict(std::string_view raw) {
    ParsedVerdict unparseable{std::nullopt, std::string(raw)};
    const auto tokens = verdict_tokens(raw);
    if (tokens.empty()) {
        return unparseable;
    }
    const auto& last = tokens.back();
    const auto starts = nonempty_line_starts(raw);
    const std::size_t window_start = starts.size() >= 2 ? starts[starts.size() - 2] : 0;
    if (last.begin < window_start) {
        return unparseable;
    }
    // Both answers on the verdict's own line ("could be yes or no") is ambiguous.
    const auto nl = raw.rfind('\n', last.begin);
    const std::size_t line_begin = nl == std::string_view::npos ? 0 : nl + 1;
    for (const auto& t : tokens) {
        if (t.begin >= line_begin && t.verdict != last.verdict) {
            return unparseable;
        }
    }
    return ParsedVerdict{last.verdict, std::string(strip_answer_label(raw.substr(0, last.begin)))};
}

MachineAssessment administer_test(LlmClient& client, const Story& story, const TtcwTest& test,
                                  const GenParams& params, const AssessorConfig& config) {
    if (config.reask_cap < 0) {
        throw PreconditionError("administer_test: re-ask cap must be >= 0");
    }
    const auto base_prompt = render_llm_instruction(test, story.text);
    MachineAssessment out;
    out.model_name = params.model_name;
    out.story_id = story.id;
    out.test_id = test.id;
    out.prompt_hash = sha256_hex(base_prompt);

    std::string prompt = base_prompt;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 0) {
            // Each re-ask differs from the last so audit replay cannot return the same reply.
            prompt += "\n\n";
            prompt += kAnswerReminder;
        }
        try {
            out.raw_response = client.complete(prompt, params);
        } catch (const ClientError&) {
            rethrow_with_context("story " + story.id + ", test " + test.id + ": ");
        }
        out.attempts = attempt + 1;
        auto parsed = parse_verdict(out.raw_response);
        out.verdict = parsed.verdict;
        out.rationale = std::move(parsed.rationale);
        if (out.verdict || attempt >= config.reask_cap) {
            return out;
        }
    }
}

SuiteResult run_suite(LlmClient& client, const std::vector<Story>& stories, const std::vector<TtcwTest>& tests,
                      const GenParams& params, const AssessorConfig& config) {
    if (stories.empty() || tests.empty()) {
        throw PreconditionError("run_suite: needs at least one story and one test");
    }
    const std::size_t total = stories.size() * tests.size();
    std::vector<std::optional<MachineAssessment>> slots(total);
    std::vector<std::optional<std::string>> errors(total);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= total) {
                return;
            }
            const auto& story = stories[i / tests.size()];
            const auto& test = tests[i % tests.size()];
            try {
                slots[i] = administer_test(client, story, test, params, config);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        }
    };

    const std::size_t width = std::clamp<std::size_t>(config.parallelism, 1, total);
    {
        std::vector<std::jthread> pool;
        pool.reserve(width - 1);
        for (std::size_t w = 1; w < width; ++w) {
            pool.emplace_back(worker);
        }
        worker();
    }

    SuiteResult result;
    result.assessments.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        if (slots[i]) {
            result.assessments.push_back(std::move(*slots[i]));
        } else {
            result.failures.push_back(
                {stories[i / tests.size()].id, tests[i % tests.size()].id, errors[i].value_or("unknown error")});
        }
    }
    if (!result.failures.empty()) {
        spdlog::warn("{} of {} pairs failed", result.failures.size(), total);
    }
    return result;
}

std::string machine_assessments_to_jsonl(const std::vector<MachineAssessment>& items) {
    std::string out;
    for (const auto& m : items) {
        json j = {{"model_name", m.model_name},
                  {"story_id", m.story_id},
                  {"test_id", m.test_id},
                  {"verdict", m.verdict ? std::string(to_string(*m.verdict)) : std::string("Unparseable")},
                  {"rationale", m.rationale},
                  {"raw_response", m.raw_response},
                  {"prompt_hash", m.prompt_hash},
                  {"attempts", m.attempts}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<MachineAssessment> parse_machine_assessments(std::string_view jsonl, std::string_view origin) {
    std::vector<MachineAssessment> out;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto where = std::string(origin) + ":" + std::to_string(line_no);
        try {
            auto j = json::parse(line);
            MachineAssessment m;
            m.model_name = j.at("model_name").get<std::string>();
            m.story_id = j.at("story_id").get<std::string>();
            m.test_id = j.at("test_id").get<std::string>();
            m.raw_response = j.at("raw_response").get<std::string>();
            m.rationale = j.at("rationale").get<std::string>();
            m.prompt_hash = j.at("prompt_hash").get<std::string>();
            m.attempts = j.at("attempts").get<int>();
            const auto label = j.at("verdict").get<std::string>();
            if (label != "Unparseable") {
                m.verdict = parse_verdict_label(label);
                if (!m.verdict) {
                    throw ValidationError(where + ": bad verdict '" + label + "'");
                }
            }
            if (m.attempts < 1) {
                throw ValidationError(where + ": attempts must be >= 1");
            }
            out.push_back(std::move(m));
        } catch (const json::exception& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    return out;
}

std::vector<MachineAssessment> import_machine_assessments(const std::filesystem::path& path) {
    return parse_machine_assessments(read_file(path), path.string());
}

void export_machine_assessments(const std::vector<MachineAssessment>& items, const std::filesystem::path& path) {
    write_file_atomic(path, machine_assessments_to_jsonl(items));
}

}  // namespace ttcw
