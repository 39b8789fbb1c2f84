#include "ttcw/corpus.h"

#include <algorithm>
#include <map>
#include <tuple>

#include <json.hpp>

#include "ttcw/errors.h"

namespace ttcw {

using json = nlohmann::json;

Source Source::model(std::string id) {
    if (id.empty() || id == kHumanLabel) {
        throw ValidationError("invalid model id '" + id + "'");
    }
    Source s;
    s.model_ = std::move(id);
    return s;
}

Source Source::parse(std::string_view label) {
    if (label.empty()) {
        throw ValidationError("empty source label");
    }
    if (label == kHumanLabel) {
        return human();
    }
    return model(std::string(label));
}

Story make_story(std::string id, std::string text, Source source, std::string plot_id) {
    Story s;
    s.id = std::move(id);
    s.word_count = word_count(text);
    s.text = std::move(text);
    s.source = std::move(source);
    s.plot_id = std::move(plot_id);
    s.created_at = now_utc();
    return s;
}

// ---------------------------------------------------------------------------
// Word counting

namespace {

bool is_unicode_space(char32_t c) {
    switch (c) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
    }
}

// Decodes one code point; malformed bytes decode as themselves (non-space).
char32_t next_code_point(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) -> int {
        if (i + k >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[i + k]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) { len = 2; cp = b0 & 0x1F; }
    else if ((b0 & 0xF0) == 0xE0) { len = 3; cp = b0 & 0x0F; }
    else if ((b0 & 0xF8) == 0xF0) { len = 4; cp = b0 & 0x07; }
    else { ++i; return b0; }
    for (int k = 1; k < len; ++k) {
        const int c = cont(static_cast<std::size_t>(k));
        if (c < 0) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | static_cast<char32_t>(c);
    }
    i += static_cast<std::size_t>(len);
    return cp;
}

}  // namespace

std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (std::size_t i = 0; i < text.size();) {
        const bool space = is_unicode_space(next_code_point(text, i));
        if (!space && !in_word) {
            ++count;
        }
        in_word = !space;
    }
    return count;
}

// ---------------------------------------------------------------------------
// Stories

namespace {

std::string need_string(const json& j, const char* field, const std::string& where, bool allow_empty = false) {
    auto it = j.find(field);
    if (it == j.end() || !it->is_string()) {
        throw ValidationError(where + ": missing string field '" + field + "'");
    }
    auto v = it->get<std::string>();
    if (!allow_empty && trim(v).empty()) {
        throw ValidationError(where + ": field '" + field + "' is empty");
    }
    return v;
}

std::optional<std::string> opt_string(const json& j, const char* field, const std::string& where) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        throw ValidationError(where + ": field '" + field + "' must be a string");
    }
    return it->get<std::string>();
}

json parse_record(std::string_view line, const std::string& where) {
    try {
        auto j = json::parse(line);
        if (!j.is_object()) {
            throw ValidationError(where + ": record is not an object");
        }
        return j;
    } catch (const json::parse_error& e) {
        throw ValidationError(where + ": " + e.what());
    }
}

std::size_t diff(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

StoryImport parse_stories(std::string_view jsonl, std::string_view origin, std::size_t tolerance) {
    StoryImport out;
    std::map<std::string, std::size_t, std::less<>> index;
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<std::size_t>, std::less<>> members;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        auto j = parse_record(line, where);
        Story s;
        s.id = need_string(j, "id", where);
        const std::string entry = where + " (story " + s.id + ")";
        s.title = opt_string(j, "title", entry);
        s.text = need_string(j, "text", entry);
        s.source = Source::parse(need_string(j, "source", entry));
        s.plot_id = need_string(j, "plot_id", entry);
        s.word_count = word_count(s.text);
        if (j.contains("word_count")) {
            if (!j["word_count"].is_number_unsigned() || j["word_count"].get<std::size_t>() != s.word_count) {
                throw ValidationError(entry + ": word_count does not match text (" + std::to_string(s.word_count) +
                                      " words)");
            }
        }
        if (auto ts = opt_string(j, "created_at", entry)) {
            s.created_at = parse_timestamp(*ts);
        }
        s.group_id = opt_string(j, "group_id", entry);
        if (j.contains("converged") && !j["converged"].is_null()) {
            if (!j["converged"].is_boolean()) {
                throw ValidationError(entry + ": 'converged' must be boolean");
            }
            s.converged = j["converged"].get<bool>();
        }
        if (!index.emplace(s.id, out.stories.size()).second) {
            throw ValidationError(entry + ": duplicate story id");
        }
        if (s.group_id) {
            auto [it, fresh] = members.try_emplace(*s.group_id);
            if (fresh) {
                group_order.push_back(*s.group_id);
            }
            it->second.push_back(out.stories.size());
        }
        out.stories.push_back(std::move(s));
    }

    for (const auto& gid : group_order) {
        const auto& idx = members.at(gid);
        const std::string where = std::string(origin) + ": group " + gid;
        if (idx.size() != kGroupSize) {
            throw ValidationError(where + ": has " + std::to_string(idx.size()) + " stories, expected 4");
        }
        StoryGroup g;
        g.id = gid;
        g.plot_id = out.stories[idx.front()].plot_id;
        std::size_t humans = 0;
        for (auto i : idx) {
            const auto& s = out.stories[i];
            if (s.plot_id != g.plot_id) {
                throw ValidationError(where + ": story " + s.id + " has a different plot_id");
            }
            if (s.source.is_human()) {
                ++humans;
                g.human_story_id = s.id;
            }
            g.story_ids.push_back(s.id);
        }
        if (humans != 1) {
            throw ValidationError(where + ": has " + std::to_string(humans) + " human stories, expected exactly 1");
        }
        const auto human_words = out.stories[index.at(g.human_story_id)].word_count;
        for (auto i : idx) {
            const auto& s = out.stories[i];
            if (s.converged.value_or(false) && diff(s.word_count, human_words) >= tolerance) {
                throw ValidationError(where + ": story " + s.id + " is marked converged but differs from the "
                                      "human story by " + std::to_string(diff(s.word_count, human_words)) +
                                      " words");
            }
        }
        out.groups.push_back(std::move(g));
    }
    return out;
}

StoryImport import_stories(const std::filesystem::path& path, std::size_t tolerance) {
    return parse_stories(read_file(path), path.string(), tolerance);
}

std::string stories_to_jsonl(const std::vector<Story>& stories) {
    std::string out;
    for (const auto& s : stories) {
        json j = {{"id", s.id},
                  {"source", s.source.label()},
                  {"plot_id", s.plot_id},
                  {"word_count", s.word_count},
                  {"created_at", format_timestamp(s.created_at)},
                  {"text", s.text}};
        if (s.title) j["title"] = *s.title;
        if (s.group_id) j["group_id"] = *s.group_id;
        if (s.converged) j["converged"] = *s.converged;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void export_stories(const std::vector<Story>& stories, const std::filesystem::path& path) {
    write_file_atomic(path, stories_to_jsonl(stories));
}

std::vector<std::string> check_human_lengths(const std::vector<Story>& stories, WordRange range) {
    std::vector<std::string> issues;
    for (const auto& s : stories) {
        if (s.source.is_human() && (s.word_count < range.min || s.word_count > range.max)) {
            issues.push_back("story " + s.id + ": " + std::to_string(s.word_count) + " words outside [" +
                             std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
        }
    }
    return issues;
}

// ---------------------------------------------------------------------------
// Plots

std::vector<Plot> parse_plots(std::string_view jsonl, std::string_view origin) {
    std::vector<Plot> plots;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        auto j = parse_record(line, where);
        Plot p;
        p.id = need_string(j, "id", where);
        p.text = need_string(j, "text", where);
        p.source_story_id = opt_string(j, "source_story_id", where);
        p.verified = j.value("verified", false);
        if (!seen.insert(p.id).second) {
            throw ValidationError(where + ": duplicate plot id " + p.id);
        }
        plots.push_back(std::move(p));
    }
    return plots;
}

std::vector<Plot> import_plots(const std::filesystem::path& path) {
    return parse_plots(read_file(path), path.string());
}

void export_plots(const std::vector<Plot>& plots, const std::filesystem::path& path) {
    std::string out;
    for (const auto& p : plots) {
        json j = {{"id", p.id}, {"text", p.text}, {"verified", p.verified}};
        if (p.source_story_id) j["source_story_id"] = *p.source_story_id;
        out += j.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Assessments

namespace {

const std::vector<std::string>& csv_header() {
    static const std::vector<std::string> h = {"rater_id",  "story_id",    "test_id",       "verdict",
                                                "rationale", "recorded_at", "last_edited_at"};
    return h;
}

std::string csv_field(std::string_view v) {
    if (v.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(v);
    }
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

// RFC 4180: quoted fields may contain commas, doubled quotes and newlines.
std::vector<CsvRow> parse_csv(std::string_view text, std::string_view origin) {
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    row.line = line;
    auto end_field = [&] {
        row.fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.fields.size() == 1 && row.fields[0].empty())) {
            rows.push_back(std::move(row));
        }
        row = CsvRow{};
        row.line = line;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started || !field.empty()) {
                    throw ValidationError(std::string(origin) + ":" + std::to_string(line) +
                                          ": stray quote in unquoted field");
                }
                quoted = true;
                field_started = true;
                break;
            case ',': end_field(); break;
            case '\r': break;
            case '\n':
                ++line;
                end_row();
                break;
            default: field += c; field_started = true;
        }
    }
    if (quoted) {
        throw ValidationError(std::string(origin) + ": unterminated quoted field");
    }
    if (field_started || !field.empty() || !row.fields.empty()) {
        end_row();
    }
    return rows;
}

struct RawAssessment {
    std::string where;
    std::string rater_id, story_id, test_id, verdict, rationale, recorded_at, last_edited_at;
};

Assessment validate_assessment(const RawAssessment& r, const AssessmentCheck& check) {
    const auto& where = r.where;
    if (trim(r.rater_id).empty()) throw ValidationError(where + ": empty rater_id");
    if (trim(r.story_id).empty()) throw ValidationError(where + ": empty story_id");
    if (!check.catalog->contains(r.test_id)) {
        throw ValidationError(where + ": unknown test id '" + r.test_id + "'");
    }
    if (check.known_stories && !check.known_stories->contains(r.story_id)) {
        throw ValidationError(where + ": unknown story id '" + r.story_id + "'");
    }
    auto verdict = parse_verdict_label(r.verdict);
    if (!verdict) {
        throw ValidationError(where + ": verdict must be \"Yes\" or \"No\", got '" + r.verdict + "'");
    }
    if (trim(r.rationale).empty()) {
        throw ValidationError(where + ": empty rationale");
    }
    Assessment a;
    a.rater_id = r.rater_id;
    a.story_id = r.story_id;
    a.test_id = r.test_id;
    a.verdict = *verdict;
    a.rationale = r.rationale;
    try {
        a.recorded_at = parse_timestamp(r.recorded_at);
        a.last_edited_at = r.last_edited_at.empty() ? a.recorded_at : parse_timestamp(r.last_edited_at);
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return a;
}

}  // namespace

AssessmentFormat format_for(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? AssessmentFormat::Csv : AssessmentFormat::Jsonl;
}

std::vector<Assessment> parse_assessments(std::string_view text, AssessmentFormat format, std::string_view origin,
                                          AssessmentCheck check) {
    std::vector<RawAssessment> raw;
    if (format == AssessmentFormat::Jsonl) {
        std::size_t line_no = 0;
        for (auto line : split_lines(text)) {
            ++line_no;
            if (trim(line).empty()) {
                continue;
            }
            const std::string where = std::string(origin) + ":" + std::to_string(line_no);
            auto j = parse_record(line, where);
            RawAssessment r;
            r.where = where;
            r.rater_id = need_string(j, "rater_id", where, true);
            r.story_id = need_string(j, "story_id", where, true);
            r.test_id = need_string(j, "test_id", where, true);
            r.verdict = need_string(j, "verdict", where, true);
            r.rationale = need_string(j, "rationale", where, true);
            r.recorded_at = need_string(j, "recorded_at", where);
            r.last_edited_at = opt_string(j, "last_edited_at", where).value_or("");
            raw.push_back(std::move(r));
        }
    } else {
        auto rows = parse_csv(text, origin);
        if (rows.empty()) {
            return {};
        }
        if (rows.front().fields != csv_header()) {
            throw ValidationError(std::string(origin) + ":1: unexpected CSV header");
        }
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& row = rows[i];
            const std::string where = std::string(origin) + ":" + std::to_string(row.line);
            if (row.fields.size() != csv_header().size()) {
                throw ValidationError(where + ": expected " + std::to_string(csv_header().size()) + " fields, got " +
                                      std::to_string(row.fields.size()));
            }
            const auto& f = row.fields;
            raw.push_back({where, f[0], f[1], f[2], f[3], f[4], f[5], f[6]});
        }
    }

    std::vector<Assessment> out;
    out.reserve(raw.size());
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& r : raw) {
        auto a = validate_assessment(r, check);
        if (!seen.emplace(a.rater_id, a.story_id, a.test_id).second) {
            throw ValidationError(r.where + ": duplicate assessment (" + a.rater_id + ", " + a.story_id + ", " +
                                  a.test_id + ")");
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<Assessment> import_assessments(const std::filesystem::path& path, AssessmentCheck check) {
    return parse_assessments(read_file(path), format_for(path), path.string(), check);
}

std::string assessments_to_string(const std::vector<Assessment>& assessments, AssessmentFormat format) {
    std::string out;
    if (format == AssessmentFormat::Jsonl) {
        for (const auto& a : assessments) {
            json j = {{"rater_id", a.rater_id},
                      {"story_id", a.story_id},
                      {"test_id", a.test_id},
                      {"verdict", to_string(a.verdict)},
                      {"rationale", a.rationale},
                      {"recorded_at", format_timestamp(a.recorded_at)},
                      {"last_edited_at", format_timestamp(a.last_edited_at)}};
            out += j.dump();
            out += '\n';
        }
        return out;
    }
    const auto& header = csv_header();
    for (std::size_t i = 0; i < header.size(); ++i) {
        out += (i ? "," : "") + header[i];
    }
    out += '\n';
    for (const auto& a : assessments) {
        out += csv_field(a.rater_id) + ',' + csv_field(a.story_id) + ',' + csv_field(a.test_id) + ',' +
               std::string(to_string(a.verdict)) + ',' + csv_field(a.rationale) + ',' +
               format_timestamp(a.recorded_at) + ',' + format_timestamp(a.last_edited_at) + '\n';
    }
    return out;
}

void export_assessments(const std::vector<Assessment>& assessments, const std::filesystem::path& path,
                        AssessmentFormat format) {
    write_file_atomic(path, assessments_to_string(assessments, format));
}

}  // namespace ttcw
