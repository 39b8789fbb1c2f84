#include "ttcw/stats.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

namespace ttcw {

Verdict majority_vote(std::span<const Verdict> verdicts) {
    if (verdicts.size() < 2) {
        throw StatsError("majority_vote needs at least 2 verdicts");
    }
    const auto yes = static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), Verdict::Yes));
    const auto no = verdicts.size() - yes;
    if (yes == no) {
        throw TieError("majority_vote: tie at " + std::to_string(yes) + "-" + std::to_string(no));
    }
    return yes > no ? Verdict::Yes : Verdict::No;
}

RatingMatrix rating_matrix(const std::vector<Assessment>& assessments, std::string_view test_id) {
    std::map<std::string, RatingItem> per_story;
    for (const auto& a : assessments) {
        if (a.test_id != test_id) {
            continue;
        }
        auto& item = per_story[a.story_id];
        (a.verdict == Verdict::Yes ? item.yes : item.no) += 1;
    }
    // Most common rater count; ties resolve to the larger count.
    std::map<std::size_t, std::size_t> freq;
    for (const auto& [story, item] : per_story) {
        ++freq[item.raters()];
    }
    std::size_t modal = 0;
    std::size_t best = 0;
    for (const auto& [n, f] : freq) {
        if (f >= best) {
            best = f;
            modal = n;
        }
    }
    RatingMatrix m;
    for (const auto& [story, item] : per_story) {
        if (item.raters() == modal) {
            m.items.push_back(item);
        } else {
            ++m.excluded;
        }
    }
    return m;
}

Kappa fleiss_kappa(const RatingMatrix& matrix) {
    const auto& items = matrix.items;
    if (items.size() < 2) {
        throw StatsError("fleiss_kappa needs at least 2 items");
    }
    const std::size_t n = items.front().raters();
    if (n < 2) {
        throw StatsError("fleiss_kappa needs at least 2 raters per item");
    }
    std::size_t total_yes = 0;
    double agreement_sum = 0.0;
    for (const auto& item : items) {
        if (item.raters() != n) {
            throw StatsError("fleiss_kappa: items have unequal rater counts (" + std::to_string(n) + " vs " +
                             std::to_string(item.raters()) + ")");
        }
        total_yes += item.yes;
        const double agree = static_cast<double>(item.yes * (item.yes - (item.yes > 0 ? 1 : 0))) +
                             static_cast<double>(item.no * (item.no - (item.no > 0 ? 1 : 0)));
        agreement_sum += agree / static_cast<double>(n * (n - 1));
    }
    const std::size_t total = items.size() * n;
    if (total_yes == 0 || total_yes == total) {
        return {1.0, true};
    }
    const double p_bar = agreement_sum / static_cast<double>(items.size());
    const double p_yes = static_cast<double>(total_yes) / static_cast<double>(total);
    const double p_no = 1.0 - p_yes;
    const double p_e = p_yes * p_yes + p_no * p_no;
    return {(p_bar - p_e) / (1.0 - p_e), false};
}

Kappa cohen_kappa(std::span<const Verdict> a, std::span<const Verdict> b) {
    if (a.size() != b.size()) {
        throw StatsError("cohen_kappa: length mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    }
    if (a.empty()) {
        throw StatsError("cohen_kappa: empty input");
    }
    // Integer form: kappa = (n*matches - E) / (n^2 - E), E = sum of marginal
    // products, so constant raters give exactly 0.
    long long n = static_cast<long long>(a.size());
    long long matches = 0, a_yes = 0, b_yes = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        matches += a[i] == b[i];
        a_yes += a[i] == Verdict::Yes;
        b_yes += b[i] == Verdict::Yes;
    }
    const long long expected = a_yes * b_yes + (n - a_yes) * (n - b_yes);
    if (expected == n * n) {
        return {matches == n ? 1.0 : 0.0, true};
    }
    return {static_cast<double>(n * matches - expected) / static_cast<double>(n * n - expected), false};
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw StatsError("pearson: length mismatch");
    }
    if (xs.size() < 2) {
        throw StatsError("pearson needs at least 2 points");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw StatsError("pearson: zero variance");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

SourceIndex index_sources(const std::vector<Story>& stories) {
    SourceIndex idx;
    for (const auto& s : stories) {
        idx.emplace(s.id, s.source);
    }
    return idx;
}

double pass_rate(const std::vector<Assessment>& assessments, const SourceIndex& sources, const Selection& selection) {
    std::size_t yes = 0, total = 0;
    for (const auto& a : assessments) {
        if (selection.test_id && a.test_id != *selection.test_id) {
            continue;
        }
        if (selection.source_label) {
            auto it = sources.find(a.story_id);
            if (it == sources.end() || it->second.label() != *selection.source_label) {
                continue;
            }
        }
        ++total;
        yes += a.verdict == Verdict::Yes;
    }
    if (total == 0) {
        throw StatsError("pass_rate: empty selection");
    }
    return static_cast<double>(yes) / static_cast<double>(total);
}

AggregateScore aggregate_score(std::span<const Assessment> assessments, const Catalog& catalog) {
    if (assessments.size() != catalog.size()) {
        throw StatsError("aggregate_score needs exactly " + std::to_string(catalog.size()) + " assessments, got " +
                         std::to_string(assessments.size()));
    }
    const auto& first = assessments.front();
    std::set<std::string_view> tests;
    int score = 0;
    for (const auto& a : assessments) {
        if (a.rater_id != first.rater_id || a.story_id != first.story_id) {
            throw StatsError("aggregate_score: assessments mix raters or stories");
        }
        if (!catalog.contains(a.test_id) || !tests.insert(a.test_id).second) {
            throw StatsError("aggregate_score: test set incomplete or repeated (" + a.test_id + ")");
        }
        score += a.verdict == Verdict::Yes;
    }
    return {first.story_id, first.rater_id, score};
}

AggregateScores aggregate_scores(const std::vector<Assessment>& assessments, const Catalog& catalog) {
    std::map<std::pair<std::string, std::string>, std::vector<Assessment>> by_pair;
    for (const auto& a : assessments) {
        by_pair[{a.story_id, a.rater_id}].push_back(a);
    }
    AggregateScores out;
    for (const auto& [key, group] : by_pair) {
        try {
            out.scores.push_back(aggregate_score(group, catalog));
        } catch (const StatsError&) {
            ++out.incomplete;
        }
    }
    return out;
}

double expert_aggregate_agreement(const std::vector<Assessment>& assessments, PairingMode mode,
                                  const Catalog& catalog) {
    const auto scored = aggregate_scores(assessments, catalog);
    std::map<std::string, std::vector<const AggregateScore*>> by_story;
    for (const auto& s : scored.scores) {
        by_story[s.story_id].push_back(&s);
    }
    if (mode == PairingMode::Pooled) {
        std::vector<double> xs, ys;
        for (const auto& [story, raters] : by_story) {
            for (std::size_t i = 0; i < raters.size(); ++i) {
                for (std::size_t j = i + 1; j < raters.size(); ++j) {
                    const double a = raters[i]->score;
                    const double b = raters[j]->score;
                    xs.push_back(a);
                    ys.push_back(b);
                    xs.push_back(b);
                    ys.push_back(a);
                }
            }
        }
        if (xs.size() < 4) {
            throw StatsError("expert_aggregate_agreement: fewer than 2 shared (rater pair, story) observations");
        }
        return pearson(xs, ys);
    }

    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> per_pair;
    for (const auto& [story, raters] : by_story) {
        for (std::size_t i = 0; i < raters.size(); ++i) {
            for (std::size_t j = i + 1; j < raters.size(); ++j) {
                auto* a = raters[i];
                auto* b = raters[j];
                if (b->rater_id < a->rater_id) std::swap(a, b);
                auto& series = per_pair[{a->rater_id, b->rater_id}];
                series.first.push_back(a->score);
                series.second.push_back(b->score);
            }
        }
    }
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& [pair, series] : per_pair) {
        if (series.first.size() < 2) {
            continue;
        }
        try {
            sum += pearson(series.first, series.second);
            ++used;
        } catch (const StatsError&) {
            // constant scores for this pair: correlation undefined
        }
    }
    if (used == 0) {
        throw StatsError("expert_aggregate_agreement: no rater pair shares 2 stories with varying scores");
    }
    return sum / static_cast<double>(used);
}

AssessorCorrelation assessor_correlation(const std::vector<MachineAssessment>& machine,
                                         const std::vector<Assessment>& experts, const Catalog& catalog) {
    if (machine.empty()) {
        throw StatsError("assessor_correlation: no machine assessments");
    }
    AssessorCorrelation out;
    out.model_name = machine.front().model_name;
    for (const auto& m : machine) {
        if (m.model_name != out.model_name) {
            throw StatsError("assessor_correlation: mixed models (" + out.model_name + ", " + m.model_name + ")");
        }
    }

    std::map<std::pair<std::string, std::string>, std::vector<Verdict>, std::less<>> expert_votes;
    for (const auto& a : experts) {
        expert_votes[{a.story_id, a.test_id}].push_back(a.verdict);
    }

    std::vector<std::string> gaps;
    std::map<std::string, std::pair<std::vector<Verdict>, std::vector<Verdict>>> per_test;
    for (const auto& m : machine) {
        auto it = expert_votes.find(std::make_pair(m.story_id, m.test_id));
        if (it == expert_votes.end() || it->second.size() < 2) {
            gaps.push_back(m.story_id + " / " + m.test_id);
            continue;
        }
        if (!m.verdict) {
            ++out.unparseable;
            continue;
        }
        Verdict majority;
        try {
            majority = majority_vote(it->second);
        } catch (const TieError&) {
            ++out.ties;
            continue;
        }
        auto& series = per_test[m.test_id];
        series.first.push_back(*m.verdict);
        series.second.push_back(majority);
    }
    if (!gaps.empty()) {
        auto what = "assessor_correlation: " + std::to_string(gaps.size()) +
                    " machine items lack >= 2 expert ratings (first: " + gaps.front() + ")";
        throw CoverageError(std::move(what), std::move(gaps));
    }

    double sum = 0.0;
    for (const auto& t : catalog.tests()) {
        auto it = per_test.find(t.id);
        if (it == per_test.end()) {
            continue;
        }
        auto k = cohen_kappa(it->second.first, it->second.second);
        out.per_test.push_back({t.id, k, it->second.first.size()});
        sum += k.value;
    }
    if (out.per_test.empty()) {
        throw StatsError("assessor_correlation: no usable items");
    }
    out.mean = sum / static_cast<double>(out.per_test.size());
    return out;
}

}  // namespace ttcw
