#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ttcw/assessor.h"
#include "ttcw/corpus.h"
#include "ttcw/protocol.h"
#include "ttcw/registry.h"
#include "ttcw/stats.h"

namespace ttcw {

/// Everything the report reads from a corpus directory.
struct CorpusSnapshot {
    std::vector<Story> stories;
    /// Imported expert assessments plus those of finalized sessions.
    std::vector<Assessment> assessments;
    /// Finalized sessions only; source of rankings and attributions.
    std::vector<Session> sessions;
};

/// Reads stories.jsonl, and assessments.jsonl / sessions.jsonl when present.
/// A (rater, story, test) cell recorded both in the imported file and in a
/// finalized session is a ValidationError.
CorpusSnapshot load_snapshot(const std::filesystem::path& corpus_dir, const Catalog& catalog = Catalog::builtin());

struct PassRateRow {
    std::string test_id;
    Dimension dimension = Dimension::Fluency;
    std::string name;
    std::map<std::string, double> rates;  // source label -> fraction; absent when unrated
    std::optional<double> fleiss;         // nullopt when undefined (fewer than 2 items)
    bool fleiss_degenerate = false;       // every rating in one category; value fixed at 1
};

struct AssessorRow {
    std::string model_name;
    std::map<std::string, double> kappa;  // test id -> Cohen kappa
    std::set<std::string> degenerate;     // tests whose kappa is a p_e = 1 convention
    double mean = 0.0;
    std::size_t unparseable = 0;
    std::size_t ties = 0;
};

struct Exclusions {
    std::size_t fleiss_items = 0;         // stories dropped for an off-mode rater count
    std::size_t incomplete_aggregates = 0;  // (rater, story) pairs without all tests
    std::size_t unrankable_sessions = 0;  // finalized sessions without a ranking
    std::size_t uncovered_machine = 0;    // machine items lacking 2 expert ratings
};

struct AgreementReport {
    /// Column order: models by label, then human.
    std::vector<std::string> sources;
    std::vector<PassRateRow> rows;  // catalog order
    std::map<std::string, double> average;
    std::optional<double> mean_fleiss;
    std::optional<double> aggregate_pearson;  // pooled pairing
    /// source -> fraction of (rater, story) scores at 0..14 tests passed.
    std::map<std::string, std::vector<double>> aggregate_histogram;
    std::map<std::string, std::array<double, kGroupSize>> ranking_distribution;
    std::map<std::string, std::array<double, 3>> attribution_distribution;
    std::vector<AssessorRow> assessor_table;
    Exclusions exclusions;
};

/// Throws ValidationError when the snapshot has no expert assessments.
AgreementReport build_report(const CorpusSnapshot& snapshot, const std::vector<MachineAssessment>& machine = {},
                             const Catalog& catalog = Catalog::builtin());

enum class ReportFormat { Markdown, Csv, Html };

/// "md"/"markdown", "csv", "html". Throws PreconditionError otherwise.
ReportFormat parse_report_format(std::string_view name);

/// Percentages carry one decimal, kappa and rho two; csv keeps six.
std::string render_report(const AgreementReport& report, ReportFormat format,
                          const Catalog& catalog = Catalog::builtin());

std::string html_escape(std::string_view text);

}  // namespace ttcw
