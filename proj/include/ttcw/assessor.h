#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttcw/corpus.h"
#include "ttcw/llm_client.h"
#include "ttcw/registry.h"

namespace ttcw {

struct ParsedVerdict {
    /// nullopt means Unparseable.
    std::optional<Verdict> verdict;
    std::string rationale;

    bool parseable() const { return verdict.has_value(); }
};

/// The verdict is the last standalone, case-insensitive "yes"/"no" token,
/// provided it sits in the final two non-empty lines; text before the token
/// is the rationale. A final line holding both "yes" and "no" is ambiguous
/// and, like a missing token, yields Unparseable with the full text as
/// rationale.
ParsedVerdict parse_verdict(std::string_view raw_response);

struct MachineAssessment {
    std::string model_name;
    std::string story_id;
    std::string test_id;
    std::string raw_response;
    std::optional<Verdict> verdict;  // nullopt: Unparseable, excluded from statistics
    std::string rationale;
    std::string prompt_hash;
    int attempts = 1;

    bool parseable() const { return verdict.has_value(); }
    bool operator==(const MachineAssessment&) const = default;
};

inline constexpr std::string_view kAnswerReminder = "Answer strictly Yes or No.";

struct AssessorConfig {
    /// Extra attempts after an unparseable reply.
    int reask_cap = 2;
    std::size_t parallelism = 4;
};

MachineAssessment administer_test(LlmClient& client, const Story& story, const TtcwTest& test,
                                  const GenParams& params, const AssessorConfig& config = {});

struct PairFailure {
    std::string story_id;
    std::string test_id;
    std::string error;
};

struct SuiteResult {
    /// story-major, test-minor order regardless of scheduling.
    std::vector<MachineAssessment> assessments;
    std::vector<PairFailure> failures;
};

/// Administers every (story, test) pair on a worker pool. Failed pairs are
/// recorded and the suite continues. Wrap the client in an AuditedClient with
/// replay to make reruns skip pairs already answered.
SuiteResult run_suite(LlmClient& client, const std::vector<Story>& stories, const std::vector<TtcwTest>& tests,
                      const GenParams& params, const AssessorConfig& config = {});

std::string machine_assessments_to_jsonl(const std::vector<MachineAssessment>& items);
std::vector<MachineAssessment> parse_machine_assessments(std::string_view jsonl,
                                                         std::string_view origin = "<machine>");
std::vector<MachineAssessment> import_machine_assessments(const std::filesystem::path& path);
void export_machine_assessments(const std::vector<MachineAssessment>& items, const std::filesystem::path& path);

}  // namespace ttcw
