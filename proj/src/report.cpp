#include "ttcw/report.h"

#include <algorithm>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "ttcw/errors.h"

namespace ttcw {

namespace {

using CellKey = std::tuple<std::string, std::string, std::string>;

CellKey cell_of(const Assessment& a) { return {a.rater_id, a.story_id, a.test_id}; }

std::string column_title(const std::string& source) {
    return source == Source::kHumanLabel ? std::string("Human") : source;
}

// Fixed-point rendering without a negative zero.
std::string fixed(double v, int digits) {
    auto s = fmt::format("{:.{}f}", v, digits);
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) {
        s.erase(0, 1);
    }
    return s;
}

std::string pct(double fraction) { return fixed(100.0 * fraction, 1); }

template <class Map>
std::string cell(const Map& m, const std::string& key, int digits, bool percent) {
    auto it = m.find(key);
    if (it == m.end()) {
        return "n/a";
    }
    return percent ? pct(it->second) : fixed(it->second, digits);
}

std::string opt_fixed(const std::optional<double>& v) { return v ? fixed(*v, 2) : "n/a"; }

}  // namespace

CorpusSnapshot load_snapshot(const std::filesystem::path& corpus_dir, const Catalog& catalog) {
    const CorpusPaths paths{corpus_dir};
    CorpusSnapshot snap;
    snap.stories = import_stories(paths.stories()).stories;

    std::set<std::string, std::less<>> known;
    for (const auto& s : snap.stories) {
        known.insert(s.id);
    }
    if (std::filesystem::exists(paths.assessments())) {
        snap.assessments = import_assessments(paths.assessments(), {&catalog, &known});
    }
    std::set<CellKey> seen;
    for (const auto& a : snap.assessments) {
        seen.insert(cell_of(a));
    }
    if (std::filesystem::exists(paths.sessions())) {
        for (auto& s : parse_sessions(read_file(paths.sessions()), paths.sessions().string())) {
            if (s.status != SessionStatus::Finalized) {
                continue;
            }
            for (const auto& [key, a] : s.assessments) {
                if (!seen.insert(cell_of(a)).second) {
                    throw ValidationError(fmt::format("{}: cell ({}, {}, {}) also present in {}",
                                                      paths.sessions().string(), a.rater_id, a.story_id, a.test_id,
                                                      paths.assessments().string()));
                }
                snap.assessments.push_back(a);
            }
            snap.sessions.push_back(std::move(s));
        }
    }
    return snap;
}

AgreementReport build_report(const CorpusSnapshot& snapshot, const std::vector<MachineAssessment>& machine,
                             const Catalog& catalog) {
    if (snapshot.assessments.empty()) {
        throw ValidationError("corpus has no expert assessments to report on");
    }
    const auto sources = index_sources(snapshot.stories);
    AgreementReport r;

    std::set<std::string> models;
    bool has_human = false;
    for (const auto& a : snapshot.assessments) {
        auto it = sources.find(a.story_id);
        if (it == sources.end()) {
            throw ValidationError("assessment references unknown story " + a.story_id);
        }
        if (it->second.is_human()) {
            has_human = true;
        } else {
            models.insert(it->second.model_id());
        }
    }
    r.sources.assign(models.begin(), models.end());
    if (has_human) {
        r.sources.emplace_back(Source::kHumanLabel);
    }

    double fleiss_sum = 0.0;
    std::size_t fleiss_n = 0;
    std::map<std::string, std::pair<double, std::size_t>> avg;
    for (const auto& t : catalog.tests()) {
        PassRateRow row{t.id, t.dimension, t.name, {}, std::nullopt};
        for (const auto& src : r.sources) {
            try {
                const double rate = pass_rate(snapshot.assessments, sources, {src, t.id});
                row.rates.emplace(src, rate);
                avg[src].first += rate;
                avg[src].second += 1;
            } catch (const StatsError&) {
                // no assessment for this (source, test)
            }
        }
        const auto matrix = rating_matrix(snapshot.assessments, t.id);
        r.exclusions.fleiss_items += matrix.excluded;
        try {
            const auto k = fleiss_kappa(matrix);
            row.fleiss = k.value;
            row.fleiss_degenerate = k.degenerate;
            fleiss_sum += *row.fleiss;
            ++fleiss_n;
        } catch (const StatsError&) {
            // fewer than 2 items or raters
        }
        r.rows.push_back(std::move(row));
    }
    for (const auto& [src, acc] : avg) {
        r.average[src] = acc.first / static_cast<double>(acc.second);
    }
    if (fleiss_n > 0) {
        r.mean_fleiss = fleiss_sum / static_cast<double>(fleiss_n);
    }

    const auto scored = aggregate_scores(snapshot.assessments, catalog);
    r.exclusions.incomplete_aggregates = scored.incomplete;
    try {
        r.aggregate_pearson = expert_aggregate_agreement(snapshot.assessments, PairingMode::Pooled, catalog);
    } catch (const StatsError&) {
        // no shared stories or constant scores
    }
    std::map<std::string, std::vector<std::size_t>> hist;
    for (const auto& s : scored.scores) {
        auto& h = hist[sources.at(s.story_id).label()];
        h.resize(catalog.size() + 1);
        ++h[static_cast<std::size_t>(s.score)];
    }
    for (const auto& [src, counts] : hist) {
        std::size_t total = 0;
        for (auto c : counts) total += c;
        auto& out = r.aggregate_histogram[src];
        for (auto c : counts) out.push_back(static_cast<double>(c) / static_cast<double>(total));
    }

    std::map<std::string, std::pair<std::array<std::size_t, kGroupSize>, std::size_t>> ranks;
    std::map<std::string, std::pair<std::array<std::size_t, 3>, std::size_t>> attributions;
    for (const auto& s : snapshot.sessions) {
        if (!s.ranking) {
            ++r.exclusions.unrankable_sessions;
        } else {
            for (const auto& [sid, rank] : *s.ranking) {
                if (rank < 1 || rank > static_cast<int>(kGroupSize)) {
                    throw ValidationError(fmt::format("session {}: rank {} out of range", s.id, rank));
                }
                auto& acc = ranks[sources.at(sid).label()];
                ++acc.first[static_cast<std::size_t>(rank - 1)];
                ++acc.second;
            }
        }
        for (const auto& [sid, a] : s.attributions) {
            auto& acc = attributions[sources.at(sid).label()];
            ++acc.first[static_cast<std::size_t>(a)];
            ++acc.second;
        }
    }
    for (const auto& [src, acc] : ranks) {
        auto& out = r.ranking_distribution[src];
        for (std::size_t i = 0; i < kGroupSize; ++i) {
            out[i] = static_cast<double>(acc.first[i]) / static_cast<double>(acc.second);
        }
    }
    for (const auto& [src, acc] : attributions) {
        auto& out = r.attribution_distribution[src];
        for (std::size_t i = 0; i < 3; ++i) {
            out[i] = static_cast<double>(acc.first[i]) / static_cast<double>(acc.second);
        }
    }

    if (!machine.empty()) {
        std::map<std::pair<std::string, std::string>, std::size_t> coverage;
        for (const auto& a : snapshot.assessments) {
            ++coverage[{a.story_id, a.test_id}];
        }
        std::map<std::string, std::vector<MachineAssessment>> by_model;
        for (const auto& m : machine) {
            auto it = coverage.find({m.story_id, m.test_id});
            if (it == coverage.end() || it->second < 2) {
                ++r.exclusions.uncovered_machine;
                continue;
            }
            by_model[m.model_name].push_back(m);
        }
        for (const auto& [model, items] : by_model) {
            AssessorRow row{model, {}, {}, 0.0, 0, 0};
            try {
                const auto c = assessor_correlation(items, snapshot.assessments, catalog);
                for (const auto& t : c.per_test) {
                    row.kappa[t.test_id] = t.kappa.value;
                    if (t.kappa.degenerate) row.degenerate.insert(t.test_id);
                }
                row.mean = c.mean;
                row.unparseable = c.unparseable;
                row.ties = c.ties;
            } catch (const StatsError&) {
                // every item unparseable or tied: keep the row with no kappas
                for (const auto& m : items) row.unparseable += m.parseable() ? 0 : 1;
            }
            r.assessor_table.push_back(std::move(row));
        }
    }
    return r;
}

ReportFormat parse_report_format(std::string_view name) {
    if (name == "md" || name == "markdown") return ReportFormat::Markdown;
    if (name == "csv") return ReportFormat::Csv;
    if (name == "html") return ReportFormat::Html;
    throw PreconditionError(fmt::format("unknown report format '{}' (expected md, csv or html)", name));
}

std::string html_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

namespace {

// A rendered table: header plus rows of already-formatted cells.
struct Table {
    std::string title;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    bool marks_degenerate = false;
};

std::vector<Table> tables_for(const AgreementReport& r, const Catalog& catalog) {
    std::vector<Table> out;

    Table pass{"Pass rates (%)", {"Dimension", "Test"}, {}};
    for (const auto& s : r.sources) pass.header.push_back(column_title(s));
    pass.header.emplace_back("Fleiss κ");
    std::optional<Dimension> last;
    for (const auto& row : r.rows) {
        std::vector<std::string> cells;
        cells.emplace_back(last == row.dimension ? "" : std::string(to_string(row.dimension)));
        last = row.dimension;
        cells.push_back(row.name);
        for (const auto& s : r.sources) cells.push_back(cell(row.rates, s, 1, true));
        cells.push_back(opt_fixed(row.fleiss) + (row.fleiss_degenerate ? "*" : ""));
        pass.rows.push_back(std::move(cells));
    }
    std::vector<std::string> avg{"", "Average"};
    for (const auto& s : r.sources) avg.push_back(cell(r.average, s, 1, true));
    avg.push_back(opt_fixed(r.mean_fleiss));
    pass.rows.push_back(std::move(avg));
    for (const auto& row : r.rows) pass.marks_degenerate = pass.marks_degenerate || row.fleiss_degenerate;
    out.push_back(std::move(pass));

    out.push_back({"Aggregate agreement", {"Statistic", "Value"},
                   {{"Pooled Pearson ρ of tests-passed counts", opt_fixed(r.aggregate_pearson)}}});

    Table hist{"Tests passed per (rater, story) (%)", {"Source"}, {}};
    for (std::size_t k = 0; k <= catalog.size(); ++k) hist.header.push_back(std::to_string(k));
    for (const auto& s : r.sources) {
        auto it = r.aggregate_histogram.find(s);
        if (it == r.aggregate_histogram.end()) continue;
        std::vector<std::string> cells{column_title(s)};
        for (double f : it->second) cells.push_back(pct(f));
        hist.rows.push_back(std::move(cells));
    }
    out.push_back(std::move(hist));

    Table rank{"Ranking distribution (%)", {"Source", "Rank 1", "Rank 2", "Rank 3", "Rank 4"}, {}};
    for (const auto& s : r.sources) {
        auto it = r.ranking_distribution.find(s);
        if (it == r.ranking_distribution.end()) continue;
        std::vector<std::string> cells{column_title(s)};
        for (double f : it->second) cells.push_back(pct(f));
        rank.rows.push_back(std::move(cells));
    }
    out.push_back(std::move(rank));

    Table attr{"Attribution distribution (%)", {"Source"}, {}};
    for (auto a : kAllAttributions) attr.header.emplace_back(attribution_label(a));
    for (const auto& s : r.sources) {
        auto it = r.attribution_distribution.find(s);
        if (it == r.attribution_distribution.end()) continue;
        std::vector<std::string> cells{column_title(s)};
        for (double f : it->second) cells.push_back(pct(f));
        attr.rows.push_back(std::move(cells));
    }
    out.push_back(std::move(attr));

    if (!r.assessor_table.empty()) {
        Table assessors{"LLM assessors: Cohen κ against expert majority", {"Test"}, {}};
        for (const auto& row : r.assessor_table) assessors.header.push_back(row.model_name);
        for (const auto& t : catalog.tests()) {
            std::vector<std::string> cells{t.name};
            for (const auto& row : r.assessor_table) {
                cells.push_back(cell(row.kappa, t.id, 2, false) + (row.degenerate.contains(t.id) ? "*" : ""));
            }
            assessors.rows.push_back(std::move(cells));
        }
        std::vector<std::string> mean{"Average"};
        for (const auto& row : r.assessor_table) mean.push_back(row.kappa.empty() ? "n/a" : fixed(row.mean, 2));
        assessors.rows.push_back(std::move(mean));
        std::vector<std::string> unparseable{"Unparseable (excluded)"};
        for (const auto& row : r.assessor_table) unparseable.push_back(std::to_string(row.unparseable));
        assessors.rows.push_back(std::move(unparseable));
        std::vector<std::string> ties{"Majority ties (excluded)"};
        for (const auto& row : r.assessor_table) ties.push_back(std::to_string(row.ties));
        assessors.rows.push_back(std::move(ties));
        for (const auto& row : r.assessor_table) {
            assessors.marks_degenerate = assessors.marks_degenerate || !row.degenerate.empty();
        }
        out.push_back(std::move(assessors));
    }

    const auto& e = r.exclusions;
    out.push_back({"Exclusions",
                   {"Reason", "Count"},
                   {{"Stories dropped from Fleiss κ (rater count differs)", std::to_string(e.fleiss_items)},
                    {"Incomplete (rater, story) aggregates", std::to_string(e.incomplete_aggregates)},
                    {"Finalized sessions without ranking", std::to_string(e.unrankable_sessions)},
                    {"Machine items without 2 expert ratings", std::to_string(e.uncovered_machine)}}});
    return out;
}

constexpr std::string_view kDegenerateNote =
    "* all ratings fell in one category; the value is fixed by convention.";

std::string render_markdown(const std::vector<Table>& tables) {
    std::string out = "# TTCW agreement report\n";
    for (const auto& t : tables) {
        out += fmt::format("\n## {}\n\n", t.title);
        if (t.rows.empty()) {
            out += "No data.\n";
            continue;
        }
        auto line = [](const std::vector<std::string>& cells) {
            std::string s = "|";
            for (const auto& c : cells) s += " " + c + " |";
            return s + "\n";
        };
        out += line(t.header);
        out += "|";
        for (std::size_t i = 0; i < t.header.size(); ++i) out += "---|";
        out += "\n";
        for (const auto& row : t.rows) out += line(row);
        if (t.marks_degenerate) out += fmt::format("\n{}\n", kDegenerateNote);
    }
    return out;
}

std::string render_html(const std::vector<Table>& tables) {
    std::string out =
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>TTCW agreement report</title></head><body>\n"
        "<h1>TTCW agreement report</h1>\n";
    for (const auto& t : tables) {
        out += "<h2>" + html_escape(t.title) + "</h2>\n";
        if (t.rows.empty()) {
            out += "<p>No data.</p>\n";
            continue;
        }
        out += "<table>\n<tr>";
        for (const auto& h : t.header) out += "<th>" + html_escape(h) + "</th>";
        out += "</tr>\n";
        for (const auto& row : t.rows) {
            out += "<tr>";
            for (const auto& c : row) out += "<td>" + html_escape(c) + "</td>";
            out += "</tr>\n";
        }
        out += "</table>\n";
        if (t.marks_degenerate) out += "<p>" + html_escape(kDegenerateNote) + "</p>\n";
    }
    return out + "</body></html>\n";
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Long format: one numeric value per line, fractions (not percentages).
std::string render_csv(const AgreementReport& r, const Catalog& catalog) {
    std::string out = "table,row,column,value\n";
    auto emit = [&](std::string_view table, std::string_view row, std::string_view col, double v) {
        out += fmt::format("{},{},{},{}\n", table, csv_field(row), csv_field(col), fixed(v, 6));
    };
    for (const auto& row : r.rows) {
        for (const auto& s : r.sources) {
            if (auto it = row.rates.find(s); it != row.rates.end()) emit("pass_rate", row.test_id, s, it->second);
        }
        if (row.fleiss) emit("pass_rate", row.test_id, "fleiss_kappa", *row.fleiss);
        if (row.fleiss_degenerate) emit("pass_rate", row.test_id, "fleiss_degenerate", 1.0);
    }
    for (const auto& s : r.sources) {
        if (auto it = r.average.find(s); it != r.average.end()) emit("pass_rate", "average", s, it->second);
    }
    if (r.mean_fleiss) emit("pass_rate", "average", "fleiss_kappa", *r.mean_fleiss);
    if (r.aggregate_pearson) emit("aggregate_pearson", "pooled", "rho", *r.aggregate_pearson);
    for (const auto& s : r.sources) {
        if (auto it = r.aggregate_histogram.find(s); it != r.aggregate_histogram.end()) {
            for (std::size_t k = 0; k < it->second.size(); ++k) emit("aggregate_histogram", s, std::to_string(k), it->second[k]);
        }
    }
    for (const auto& s : r.sources) {
        if (auto it = r.ranking_distribution.find(s); it != r.ranking_distribution.end()) {
            for (std::size_t k = 0; k < kGroupSize; ++k) emit("ranking", s, std::to_string(k + 1), it->second[k]);
        }
    }
    for (const auto& s : r.sources) {
        if (auto it = r.attribution_distribution.find(s); it != r.attribution_distribution.end()) {
            for (std::size_t k = 0; k < 3; ++k) emit("attribution", s, attribution_label(kAllAttributions[k]), it->second[k]);
        }
    }
    for (const auto& row : r.assessor_table) {
        for (const auto& t : catalog.tests()) {
            if (auto it = row.kappa.find(t.id); it != row.kappa.end()) emit("assessor_kappa", row.model_name, t.id, it->second);
            if (row.degenerate.contains(t.id)) emit("assessor_degenerate", row.model_name, t.id, 1.0);
        }
        if (!row.kappa.empty()) emit("assessor_kappa", row.model_name, "average", row.mean);
        emit("assessor_excluded", row.model_name, "unparseable", static_cast<double>(row.unparseable));
        emit("assessor_excluded", row.model_name, "ties", static_cast<double>(row.ties));
    }
    const auto& e = r.exclusions;
    emit("exclusions", "fleiss_items", "count", static_cast<double>(e.fleiss_items));
    emit("exclusions", "incomplete_aggregates", "count", static_cast<double>(e.incomplete_aggregates));
    emit("exclusions", "unrankable_sessions", "count", static_cast<double>(e.unrankable_sessions));
    emit("exclusions", "uncovered_machine", "count", static_cast<double>(e.uncovered_machine));
    return out;
}

}  // namespace

std::string render_report(const AgreementReport& report, ReportFormat format, const Catalog& catalog) {
    switch (format) {
        case ReportFormat::Markdown: return render_markdown(tables_for(report, catalog));
        case ReportFormat::Html: return render_html(tables_for(report, catalog));
        case ReportFormat::Csv: return render_csv(report, catalog);
    }
    throw PreconditionError("unknown report format");
}

}  // namespace ttcw
