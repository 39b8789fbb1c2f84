#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttcw/assessor.h"
#include "ttcw/corpus.h"
#include "ttcw/registry.h"

namespace ttcw {

/// Raised by statistics whose inputs do not meet their preconditions
/// (empty selection, unequal rater counts, zero variance, ...).
class StatsError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class TieError : public StatsError {
public:
    using StatsError::StatsError;
};

/// Chance-corrected agreement. `degenerate` marks the expected-agreement == 1
/// convention (every rating in one category), where the value is fixed by
/// convention rather than computed.
struct Kappa {
    double value = 0.0;
    bool degenerate = false;
};

/// Strict majority. Throws TieError on an exact tie, StatsError for < 2 votes.
Verdict majority_vote(std::span<const Verdict> verdicts);

struct RatingItem {
    std::size_t yes = 0;
    std::size_t no = 0;
    std::size_t raters() const { return yes + no; }
};

struct RatingMatrix {
    std::vector<RatingItem> items;
    /// Items dropped while building the matrix (rater count differed).
    std::size_t excluded = 0;
};

/// Per-story Yes/No counts for one test. Every kept item has the most common
/// rater count among the test's stories; the rest are counted in `excluded`.
RatingMatrix rating_matrix(const std::vector<Assessment>& assessments, std::string_view test_id);

/// Fleiss' kappa over binary ratings. Requires >= 2 items, each rated by the
/// same n >= 2 raters.
Kappa fleiss_kappa(const RatingMatrix& matrix);

/// Cohen's kappa for two aligned verdict vectors of equal, nonzero length.
Kappa cohen_kappa(std::span<const Verdict> a, std::span<const Verdict> b);

/// Sample Pearson correlation. Throws StatsError on length mismatch,
/// fewer than 2 points, or zero variance in either series.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Maps story id -> source, used to slice assessments by author.
using SourceIndex = std::map<std::string, Source, std::less<>>;

SourceIndex index_sources(const std::vector<Story>& stories);

struct Selection {
    std::optional<std::string> source_label;  // "human" or model id
    std::optional<std::string> test_id;
};

/// Fraction of individual (not majority-voted) assessments answering Yes
/// within the selection. Throws StatsError when the selection is empty.
double pass_rate(const std::vector<Assessment>& assessments, const SourceIndex& sources, const Selection& selection);

struct AggregateScore {
    std::string story_id;
    std::string rater_id;
    int score = 0;

    bool operator==(const AggregateScore&) const = default;
};

/// One rater's assessments of one story; must cover each catalog test exactly
/// once.
AggregateScore aggregate_score(std::span<const Assessment> assessments, const Catalog& catalog = Catalog::builtin());

struct AggregateScores {
    std::vector<AggregateScore> scores;  // ordered by (story, rater)
    std::size_t incomplete = 0;          // (rater, story) pairs skipped
};

AggregateScores aggregate_scores(const std::vector<Assessment>& assessments,
                                 const Catalog& catalog = Catalog::builtin());

enum class PairingMode {
    /// Both orientations of every rater pair on every shared story, one
    /// Pearson over the pooled list.
    Pooled,
    /// Pearson per rater pair over their shared stories, then the mean.
    AveragedPerPair,
};

double expert_aggregate_agreement(const std::vector<Assessment>& assessments, PairingMode mode = PairingMode::Pooled,
                                  const Catalog& catalog = Catalog::builtin());

struct TestKappa {
    std::string test_id;
    Kappa kappa;
    std::size_t items = 0;
};

struct AssessorCorrelation {
    std::string model_name;
    std::vector<TestKappa> per_test;  // catalog order; tests without items are skipped
    double mean = 0.0;
    std::size_t unparseable = 0;  // machine items excluded as Unparseable
    std::size_t ties = 0;         // items whose expert majority tied
};

/// Coverage gap: a machine-assessed (story, test) with fewer than two expert
/// ratings.
class CoverageError : public StatsError {
public:
    CoverageError(const std::string& what, std::vector<std::string> gaps)
        : StatsError(what), gaps_(std::move(gaps)) {}
    const std::vector<std::string>& gaps() const { return gaps_; }

private:
    std::vector<std::string> gaps_;
};

/// Per-test Cohen's kappa between one model's verdicts and the expert
/// majority vote on the same (story, test) items, plus the mean over tests.
AssessorCorrelation assessor_correlation(const std::vector<MachineAssessment>& machine,
                                         const std::vector<Assessment>& experts,
                                         const Catalog& catalog = Catalog::builtin());

}  // namespace ttcw
