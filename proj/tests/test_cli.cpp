#include <doctest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "helpers.h"
#include "synthetic.h"
#include "ttcw/assessor.h"
#include "ttcw/corpus.h"
#include "ttcw/protocol.h"
#include "ttcw/util.h"

using namespace ttcw;
using json = nlohmann::json;

namespace {

const std::filesystem::path kFixtures = TTCW_FIXTURES_DIR;

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI with `args`, capturing stdout and stderr through files.
Run ttcw_cli(const testing::TempDir& scratch, const std::string& args) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd = "env -u TTCW_PROVIDER -u TTCW_MODEL -u TTCW_API_BASE -u TTCW_API_KEY -u TTCW_RPM "
                            "-u TTCW_RETRY_CAP '" TTCW_CLI_PATH "' " + args + " > '" + out.string() + "' 2> '" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli: validate the fixture corpus") {
    testing::TempDir scratch;
    auto r = ttcw_cli(scratch, "validate --corpus " + q(kFixtures));
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("stories: 8 in 2 groups") != std::string::npos);
    CHECK(r.out.find("assessments: 336") != std::string::npos);
    CHECK(r.out.find("ok") != std::string::npos);
}

TEST_CASE("cli: usage errors exit 64 with help") {
    testing::TempDir scratch;
    auto r = ttcw_cli(scratch, "frobnicate");
    CHECK(r.code == 64);
    CHECK(r.err.find("Subcommands:") != std::string::npos);
    CHECK(ttcw_cli(scratch, "").code == 64);
    CHECK(ttcw_cli(scratch, "report").code == 64);
    CHECK(ttcw_cli(scratch, "generate --corpus " + q(scratch.path())).code == 64);
    CHECK(ttcw_cli(scratch, "--help").code == 0);
}

TEST_CASE("cli: validation failures exit 1") {
    testing::TempDir scratch;
    testing::TempDir corpus;
    auto g = synth::make_groups(1, {"a", "b", "c"}, 1);
    export_stories(g.stories, corpus / "stories.jsonl");
    auto r = ttcw_cli(scratch, "report --corpus " + q(corpus.path()));
    CHECK(r.code == 1);
    CHECK(r.err.find("no expert assessments") != std::string::npos);
    CHECK(ttcw_cli(scratch, "report --corpus " + q(kFixtures) + " --format pdf").code == 1);
    write_file_atomic(corpus / "stories.jsonl", "{broken\n");
    CHECK(ttcw_cli(scratch, "validate --corpus " + q(corpus.path())).code == 1);
}

TEST_CASE("cli: report formats on fixtures") {
    testing::TempDir scratch;
    auto md = ttcw_cli(scratch, "report --corpus " + q(kFixtures));
    REQUIRE(md.code == 0);
    CHECK(md.out.rfind("# TTCW agreement report", 0) == 0);
    auto csv = ttcw_cli(scratch, "report --corpus " + q(kFixtures) + " --format csv --out " + q(scratch / "r.csv"));
    REQUIRE(csv.code == 0);
    CHECK(read_file(scratch / "r.csv").rfind("table,row,column,value\n", 0) == 0);
    auto again = ttcw_cli(scratch, "report --corpus " + q(kFixtures));
    CHECK(again.out == md.out);
}

TEST_CASE("cli: import, assign and validate a fresh corpus") {
    testing::TempDir scratch;
    testing::TempDir corpus;
    auto r = ttcw_cli(scratch, "import --corpus " + q(corpus.path()) + " --stories " + q(kFixtures / "stories.jsonl") +
                                   " --plots " + q(kFixtures / "plots.jsonl"));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(ttcw_cli(scratch, "import --corpus " + q(corpus.path()) + " --plots " + q(kFixtures / "plots.jsonl")).code == 1);

    CHECK(ttcw_cli(scratch, "assign --corpus " + q(corpus.path()) + " --raters a,b").code == 1);
    r = ttcw_cli(scratch, "--seed 9 assign --corpus " + q(corpus.path()) + " --raters a,b,c,d");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("assigned 6 sessions over 4 raters") != std::string::npos);
    const auto plan = plan_from_json(read_file(corpus / "plan.json"));
    CHECK(plan.seed == 9);
    CHECK(plan.session_count() == 6);
    CHECK(ttcw_cli(scratch, "assign --corpus " + q(corpus.path()) + " --raters a,b,c,d").code == 1);

    r = ttcw_cli(scratch, "validate --corpus " + q(corpus.path()));
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("plan: 6 sessions planned") != std::string::npos);
}

TEST_CASE("cli: generate with the mock provider forms a group") {
    testing::TempDir scratch;
    testing::TempDir corpus;
    auto human = make_story("p1-human", synth::filler_text(1100, 1), Source::human(), "p1");
    export_stories({human}, corpus / "stories.jsonl");
    export_plots({{"p1", "A ferry captain hides a letter.", std::string("p1-human"), true}}, corpus / "plots.jsonl");
    write_file_atomic(scratch / "mock.json",
                      json{{"provider", "mock"}, {"mock_responses", {synth::filler_text(1050, 2)}}}.dump());

    for (const char* model : {"gpt-3.5", "gpt-4", "claude"}) {
        auto r = ttcw_cli(scratch, "--config " + q(scratch / "mock.json") + " generate --corpus " +
                                       q(corpus.path()) + " --target-from-human --model " + model);
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    auto imp = import_stories(corpus / "stories.jsonl");
    CHECK(imp.stories.size() == 4);
    REQUIRE(imp.groups.size() == 1);
    CHECK(imp.groups[0].id == "group-p1");
    CHECK(read_file(corpus / "traces.jsonl").find("\"converged\":true") != std::string::npos);

    auto rerun = ttcw_cli(scratch, "--config " + q(scratch / "mock.json") + " generate --corpus " +
                                       q(corpus.path()) + " --target-from-human --model gpt-4");
    CHECK(rerun.code == 0);
    CHECK(rerun.out.find("generated 0 stories") != std::string::npos);
}

TEST_CASE("cli: assess with the mock provider and resume") {
    testing::TempDir scratch;
    write_file_atomic(scratch / "mock.json",
                      json{{"provider", "mock"}, {"mock_responses", {"Vivid.\nAnswer: Yes", "Flat.\nAnswer: No"}}}.dump());
    const auto args = "--config " + q(scratch / "mock.json") + " assess --stories " + q(kFixtures / "stories.jsonl") +
                      " --tests fluency_1,elaboration_3 --parallelism 1 --model judge --out " + q(scratch / "m.jsonl");
    auto r = ttcw_cli(scratch, args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("assessed 16 (story, test) pairs, 0 unparseable, 0 failed") != std::string::npos);
    const auto first = read_file(scratch / "m.jsonl");
    CHECK(import_machine_assessments(scratch / "m.jsonl").size() == 16);
    CHECK(AuditLog(scratch / "m.jsonl.audit.jsonl").size() == 16);

    REQUIRE(ttcw_cli(scratch, args).code == 0);
    CHECK(read_file(scratch / "m.jsonl") == first);
    CHECK(AuditLog(scratch / "m.jsonl.audit.jsonl").size() == 16);

    auto rep = ttcw_cli(scratch, "report --corpus " + q(kFixtures) + " --machine " + q(scratch / "m.jsonl"));
    CHECK(rep.code == 0);
    CHECK(rep.out.find("| judge |") != std::string::npos);

    CHECK(ttcw_cli(scratch, "assess --stories " + q(kFixtures / "stories.jsonl") + " --tests fluency_9 --out " +
                                q(scratch / "x.jsonl")).code == 1);
}
