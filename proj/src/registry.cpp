#include "ttcw/registry.h"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "ttcw/errors.h"
#include "ttcw/llm_client.h"
#include "ttcw/util.h"

namespace ttcw {

using json = nlohmann::json;

namespace {

#include "catalog_data.inc"

constexpr std::string_view kHumanLead = "Based on the story that you just read, answer the following question.";
constexpr std::string_view kLlmTail =
    "Then overall, give your reasoning about the question below and give an answer to it between "
    "'Yes' or 'No' only";

std::string required_string(const json& rec, const char* field, const std::string& where) {
    auto it = rec.find(field);
    if (it == rec.end() || !it->is_string()) {
        throw ValidationError(where + ": missing string field '" + field + "'");
    }
    auto value = it->get<std::string>();
    if (trim(value).empty()) {
        throw ValidationError(where + ": field '" + field + "' is empty");
    }
    return value;
}

}  // namespace

std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::Fluency: return "Fluency";
        case Dimension::Flexibility: return "Flexibility";
        case Dimension::Originality: return "Originality";
        case Dimension::Elaboration: return "Elaboration";
    }
    return "?";
}

std::optional<Dimension> parse_dimension(std::string_view s) {
    for (auto d : kAllDimensions) {
        if (to_string(d) == s) {
            return d;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Verdict v) { return v == Verdict::Yes ? "Yes" : "No"; }

std::optional<Verdict> parse_verdict_label(std::string_view s) {
    if (s == "Yes") return Verdict::Yes;
    if (s == "No") return Verdict::No;
    return std::nullopt;
}

Catalog::Catalog(std::vector<TtcwTest> tests) : tests_(std::move(tests)) {}

Catalog Catalog::parse(std::string_view jsonl, std::string_view origin) {
    std::vector<TtcwTest> tests;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!rec.is_object()) {
            throw ValidationError(where + ": record is not an object");
        }
        TtcwTest t;
        t.id = required_string(rec, "id", where);
        const std::string entry = where + " (" + t.id + ")";
        auto dim = parse_dimension(required_string(rec, "dimension", entry));
        if (!dim) {
            throw ValidationError(entry + ": unknown dimension");
        }
        t.dimension = *dim;
        t.name = required_string(rec, "name", entry);
        t.question = required_string(rec, "question", entry);
        t.expanded_measure = required_string(rec, "expanded_measure", entry);
        t.llm_elicitation = required_string(rec, "llm_elicitation", entry);
        auto ver = rec.find("verified");
        if (ver == rec.end() || !ver->is_boolean()) {
            throw ValidationError(entry + ": missing boolean field 'verified'");
        }
        t.verified = ver->get<bool>();
        if (!seen.insert(t.id).second) {
            throw ValidationError(entry + ": duplicate test id");
        }
        tests.push_back(std::move(t));
    }
    return Catalog(std::move(tests));
}

Catalog Catalog::load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
}

const Catalog& Catalog::builtin() {
    static const Catalog catalog = [] {
        auto c = parse(kBuiltinCatalog, "builtin");
        std::stable_sort(c.tests_.begin(), c.tests_.end(), [](const TtcwTest& a, const TtcwTest& b) {
            return static_cast<int>(a.dimension) < static_cast<int>(b.dimension);
        });
        return c;
    }();
    return catalog;
}

const TtcwTest* Catalog::find(std::string_view id) const {
    auto it = std::find_if(tests_.begin(), tests_.end(), [&](const TtcwTest& t) { return t.id == id; });
    return it == tests_.end() ? nullptr : &*it;
}

const TtcwTest& Catalog::at(std::string_view id) const {
    if (const auto* t = find(id)) {
        return *t;
    }
    throw ValidationError("unknown test id '" + std::string(id) + "'");
}

std::string Catalog::to_jsonl() const {
    std::string out;
    for (const auto& t : tests_) {
        json rec = {{"id", t.id},
                    {"dimension", to_string(t.dimension)},
                    {"name", t.name},
                    {"question", t.question},
                    {"expanded_measure", t.expanded_measure},
                    {"llm_elicitation", t.llm_elicitation},
                    {"verified", t.verified}};
        out += rec.dump();
        out += '\n';
    }
    return out;
}

const std::vector<TtcwTest>& all_tests() { return Catalog::builtin().tests(); }

std::string render_human_instruction(const TtcwTest& test) {
    std::string out;
    out.reserve(test.expanded_measure.size() + test.question.size() + 128);
    out += test.expanded_measure;
    out += "\n\n";
    out += kHumanLead;
    out += '\n';
    out += test.question;
    out += "\n-Yes\n-No\n\nReasoning :";
    return out;
}

std::string render_llm_instruction(const TtcwTest& test, std::string_view story_text) {
    if (trim(story_text).empty()) {
        throw PreconditionError("render_llm_instruction: story text is empty");
    }
    std::string out;
    out.reserve(story_text.size() + test.expanded_measure.size() + 512);
    out += story_text;
    out += "\n\n";
    out += test.expanded_measure;
    out += "\n\n";
    out += test.llm_elicitation;
    out += ' ';
    out += kLlmTail;
    out += "\n\nQ) ";
    out += test.question;
    return out;
}

MeasureDraft expand_measure(std::string_view question, LlmClient& client, const GenParams& params) {
    if (trim(question).empty()) {
        throw PreconditionError("expand_measure: question is empty");
    }
    std::string prompt(kExpandMeasurePrefix);
    prompt += question;
    auto text = client.complete(prompt, params);
    if (trim(text).empty()) {
        throw GenerationError("expand_measure: empty completion");
    }
    return MeasureDraft{std::move(text), false};
}

}  // namespace ttcw
