#include <doctest.h>

#include <string>

#include <json.hpp>

#include "helpers.h"
#include "synthetic.h"
#include "ttcw/corpus.h"
#include "ttcw/errors.h"

using namespace ttcw;
using json = nlohmann::json;

namespace {

const std::filesystem::path kFixtures = TTCW_FIXTURES_DIR;

std::string story_line(const std::string& id, const std::string& source, const std::string& group,
                       std::size_t words, const std::string& plot = "p1") {
    json j = {{"id", id}, {"source", source}, {"plot_id", plot}, {"group_id", group},
              {"text", synth::filler_text(words, std::hash<std::string>{}(id))}};
    return j.dump() + "\n";
}

std::string assessment_line(const std::string& story, const std::string& test, const std::string& rationale = "why") {
    json j = {{"rater_id", "r1"}, {"story_id", story},     {"test_id", test},
              {"verdict", "Yes"}, {"rationale", rationale}, {"recorded_at", "2023-09-14T12:00:00Z"}};
    return j.dump() + "\n";
}

}  // namespace

TEST_CASE("word count") {
    CHECK(word_count("a b  c") == 3);
    CHECK(word_count("") == 0);
    CHECK(word_count("   \n\t ") == 0);
    CHECK(word_count("one\ntwo\r\nthree") == 3);
    CHECK(word_count("caf\xC3\xA9 na\xC3\xAFve") == 2);
    CHECK(word_count("a\xC2\xA0" "b") == 2);          // no-break space
    CHECK(word_count("a\xE2\x80\x83" "b c") == 3);    // em space
    CHECK(word_count("don't stop-gap") == 2);
}

TEST_CASE("source labels") {
    CHECK(Source::parse("human").is_human());
    CHECK(Source::parse("gpt-4").model_id() == "gpt-4");
    CHECK(Source::parse("gpt-4").label() == "gpt-4");
    CHECK_THROWS_AS(Source::parse(""), ValidationError);
    CHECK(Source::human() < Source::model("zeta"));
}

TEST_CASE("groups assemble from group ids") {
    const auto text = story_line("h", "human", "g", 1200) + story_line("a", "gpt-4", "g", 1100) +
                      story_line("b", "claude", "g", 1250) + story_line("c", "gpt-3.5", "g", 900);
    auto imp = parse_stories(text);
    REQUIRE(imp.groups.size() == 1);
    CHECK(imp.groups[0].human_story_id == "h");
    CHECK(imp.groups[0].story_ids == std::vector<std::string>{"h", "a", "b", "c"});
    CHECK(imp.stories[1].word_count == 1100);
}

TEST_CASE("group validation") {
    const auto three = story_line("h", "human", "g", 1200) + story_line("a", "gpt-4", "g", 1100) +
                       story_line("b", "claude", "g", 1250);
    CHECK_THROWS_AS(parse_stories(three), ValidationError);
    CHECK_THROWS_WITH_AS(parse_stories(three + story_line("h2", "human", "g", 1200)),
                         doctest::Contains("human"), ValidationError);
    CHECK_THROWS_AS(parse_stories(three + story_line("c", "gpt-3.5", "g", 1200, "p2")), ValidationError);
    CHECK_THROWS_AS(parse_stories(three + story_line("a", "gpt-3.5", "g2", 1200)), ValidationError);

    json far = json::parse(story_line("c", "gpt-3.5", "g", 1400));
    far["converged"] = true;
    CHECK_THROWS_AS(parse_stories(three + far.dump()), ValidationError);
    CHECK_NOTHROW(parse_stories(three + far.dump(), "<s>", 300));
    far["converged"] = false;
    CHECK_NOTHROW(parse_stories(three + far.dump()));
}

TEST_CASE("story record validation") {
    json s = json::parse(story_line("x", "human", "g", 5));
    s.erase("group_id");
    s["word_count"] = 6;
    CHECK_THROWS_WITH_AS(parse_stories(s.dump(), "f.jsonl"), doctest::Contains("f.jsonl:1"), ValidationError);
    s["word_count"] = 5;
    CHECK(parse_stories(s.dump()).stories.size() == 1);
    s["text"] = "  ";
    s.erase("word_count");
    CHECK_THROWS_AS(parse_stories(s.dump()), ValidationError);
    CHECK_THROWS_AS(parse_stories("[1,2]"), ValidationError);
    CHECK_THROWS_AS(parse_stories("{"), ValidationError);
}

TEST_CASE("empty files give empty collections") {
    CHECK(parse_stories("").stories.empty());
    CHECK(parse_stories("\n\n").groups.empty());
    CHECK(parse_plots("").empty());
    CHECK(parse_assessments("", AssessmentFormat::Jsonl).empty());
    CHECK(parse_assessments("", AssessmentFormat::Csv).empty());
}

TEST_CASE("story export round-trips") {
    testing::TempDir dir;
    auto g = synth::make_groups(2, {"gpt-4", "claude", "gpt-3.5"}, 3);
    export_stories(g.stories, dir / "stories.jsonl");
    auto back = import_stories(dir / "stories.jsonl");
    CHECK(back.stories == g.stories);
    CHECK(back.groups == g.groups);
}

TEST_CASE("human length range") {
    auto g = synth::make_groups(1, {"a", "b", "c"}, 1);
    CHECK(check_human_lengths(g.stories, {}).empty());
    auto issues = check_human_lengths(g.stories, {10, 20});
    REQUIRE(issues.size() == 1);
    CHECK(issues[0].find(g.groups[0].human_story_id) != std::string::npos);
}

TEST_CASE("plots round-trip") {
    testing::TempDir dir;
    std::vector<Plot> plots = {{"p1", "A lighthouse keeper retires.", std::string("s1"), true},
                               {"p2", "Two sisters sell a farm.", std::nullopt, false}};
    export_plots(plots, dir / "plots.jsonl");
    CHECK(import_plots(dir / "plots.jsonl") == plots);
    CHECK_THROWS_AS(parse_plots(R"({"id":"p","text":"a"})" "\n" R"({"id":"p","text":"b"})"), ValidationError);
}

TEST_CASE("assessment validation") {
    CHECK(parse_assessments(assessment_line("s", "fluency_1"), AssessmentFormat::Jsonl).size() == 1);
    CHECK_THROWS_WITH_AS(parse_assessments(assessment_line("s", "fluency_1", "  "), AssessmentFormat::Jsonl),
                         doctest::Contains("rationale"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_assessments(assessment_line("s", "fluency_9"), AssessmentFormat::Jsonl),
                         doctest::Contains("fluency_9"), ValidationError);
    CHECK_THROWS_WITH_AS(
        parse_assessments(assessment_line("s", "fluency_1") + assessment_line("s", "fluency_1"), AssessmentFormat::Jsonl, "a.jsonl"),
        doctest::Contains("a.jsonl:2"), ValidationError);

    json bad = json::parse(assessment_line("s", "fluency_1"));
    bad["verdict"] = "yes";
    CHECK_THROWS_AS(parse_assessments(bad.dump(), AssessmentFormat::Jsonl), ValidationError);

    std::set<std::string, std::less<>> known = {"t"};
    AssessmentCheck check;
    check.known_stories = &known;
    CHECK_THROWS_AS(parse_assessments(assessment_line("s", "fluency_1"), AssessmentFormat::Jsonl, "x", check),
                    ValidationError);
}

TEST_CASE("assessments round-trip through jsonl and csv") {
    Assessment a;
    a.rater_id = "r1";
    a.story_id = "s,1";
    a.test_id = "originality_2";
    a.verdict = Verdict::Yes;
    a.rationale = "She said \"no\",\nthen left.";
    a.recorded_at = Timestamp{std::chrono::milliseconds(1'694'711'002'125)};
    a.last_edited_at = a.recorded_at + std::chrono::milliseconds(5);
    Assessment b = a;
    b.rater_id = "r2";
    b.verdict = Verdict::No;
    const std::vector<Assessment> all = {a, b};
    for (auto fmt : {AssessmentFormat::Jsonl, AssessmentFormat::Csv}) {
        CHECK(parse_assessments(assessments_to_string(all, fmt), fmt) == all);
    }
    CHECK(format_for("x.csv") == AssessmentFormat::Csv);
    CHECK(format_for("x.jsonl") == AssessmentFormat::Jsonl);
    CHECK_THROWS_AS(parse_assessments("a,b\n", AssessmentFormat::Csv), ValidationError);
    auto csv = assessments_to_string(all, AssessmentFormat::Csv);
    CHECK_THROWS_AS(parse_assessments(csv + "\"open", AssessmentFormat::Csv), ValidationError);
}

TEST_CASE("fixture corpus is consistent") {
    auto imp = import_stories(kFixtures / "stories.jsonl");
    CHECK(imp.stories.size() == 8);
    CHECK(imp.groups.size() == 2);
    std::set<std::string, std::less<>> ids;
    for (const auto& s : imp.stories) ids.insert(s.id);
    AssessmentCheck check;
    check.known_stories = &ids;
    CHECK(import_assessments(kFixtures / "assessments.jsonl", check).size() == 336);
    CHECK(import_plots(kFixtures / "plots.jsonl").size() == 2);
}
