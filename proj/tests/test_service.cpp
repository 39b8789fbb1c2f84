#include <doctest.h>

#include <string>

#include <json.hpp>

#include "helpers.h"
#include "synthetic.h"
#include "ttcw/protocol.h"

using namespace ttcw;
using json = nlohmann::json;

namespace {

struct Harness {
    synth::GroupedStories g = synth::make_groups(1, {"gpt-3.5", "gpt-4", "claude"}, 21);
    SessionStore store{g.stories, g.groups, assign_raters({"g01"}, {"ann", "ben", "cat"}, 3, 5)};
    AnnotationService service{store};
    testing::LocalServer server{[this](httplib::Server& s) { service.mount(s); }};
    httplib::Client cli = server.client();
    std::string id = session_id_for("g01", "ann");

    Harness() { store.create_planned_sessions(); }

    json get(const std::string& path, int expect = 200) {
        auto res = cli.Get(path);
        REQUIRE(res);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }
    json put(const std::string& path, const json& body, int expect = 200) {
        auto res = cli.Put(path, body.dump(), "application/json");
        REQUIRE(res);
        CHECK_MESSAGE(res->status == expect, res->body);
        return json::parse(res->body);
    }
    json post(const std::string& path, int expect = 200) {
        auto res = cli.Post(path, "", "application/json");
        REQUIRE(res);
        CHECK_MESSAGE(res->status == expect, res->body);
        return json::parse(res->body);
    }
    std::string base() const { return "/sessions/" + id; }

    void fill() {
        for (char l = 'A'; l <= 'D'; ++l) {
            const std::string label = std::string("Story ") + l;
            for (const auto& t : all_tests()) {
                auto res = cli.Put(base() + "/assessments/" + std::string(1, l) + "/" + t.id,
                                   json{{"verdict", "Yes"}, {"rationale", "ok"}}.dump(), "application/json");
                REQUIRE(res);
                REQUIRE(res->status == 200);
            }
            put(base() + "/attributions/" + std::string(1, l), {{"attribution", "Written by AI"}});
        }
        put(base() + "/ranking", {{"Story A", 2}, {"Story B", 1}, {"Story C", 4}, {"Story D", 3}});
    }
};

}  // namespace

TEST_CASE("service: listing sessions") {
    Harness h;
    auto all = h.get("/sessions");
    CHECK(all.size() == 3);
    auto mine = h.get("/sessions?rater=ben");
    REQUIRE(mine.size() == 1);
    CHECK(mine[0]["rater_id"] == "ben");
    CHECK(mine[0]["progress"]["required"] == 56);
    CHECK(mine[0]["progress"]["assessed"] == 0);
}

TEST_CASE("service: open sessions hide sources and ids") {
    Harness h;
    const auto raw = h.cli.Get(h.base())->body;
    for (const auto& s : h.g.stories) {
        CHECK(raw.find("\"" + s.id + "\"") == std::string::npos);
    }
    for (const char* leak : {"gpt-3.5", "gpt-4", "claude", "\"source\"", "\"human\"", "story_id", "\"title\"", "Story of"}) {
        CHECK_MESSAGE(raw.find(leak) == std::string::npos, leak);
    }
    auto v = json::parse(raw);
    REQUIRE(v["stories"].size() == 4);
    CHECK(v["stories"][0]["label"] == "Story A");
    CHECK(v["tests"].size() == 14);
    CHECK(v["tests"][0]["instruction"].get<std::string>().find("Reasoning :") != std::string::npos);
    CHECK(v["attribution_options"].size() == 3);
    CHECK(v["status"] == "Open");
    CHECK(v["ranking"].is_null());
}

TEST_CASE("service: full session flow") {
    Harness h;
    auto early = h.post(h.base() + "/finalize", 422);
    CHECK(early["missing"].size() == 56 + 1 + 4);

    h.put(h.base() + "/assessments/A/fluency_1", {{"verdict", "No"}, {"rationale", "slow"}});
    auto v = h.put(h.base() + "/assessments/Story%20A/fluency_1", {{"verdict", "Yes"}, {"rationale", "fine"}});
    REQUIRE(v["assessments"].size() == 1);
    CHECK(v["assessments"][0]["verdict"] == "Yes");
    CHECK(v["assessments"][0]["story"] == "Story A");

    h.fill();
    auto fin = h.post(h.base() + "/finalize");
    CHECK(fin["status"] == "Finalized");
    CHECK(fin["ranking"]["Story B"] == 1);
    for (const auto& s : fin["stories"]) {
        CHECK(s.contains("source"));
        CHECK(s.contains("story_id"));
    }
    h.put(h.base() + "/assessments/A/fluency_1", {{"verdict", "No"}, {"rationale", "late"}}, 409);
    h.post(h.base() + "/finalize", 409);
    CHECK(h.store.get(h.id).status == SessionStatus::Finalized);
}

TEST_CASE("service: error statuses") {
    Harness h;
    h.get("/sessions/nobody", 404);
    h.put(h.base() + "/assessments/E/fluency_1", {{"verdict", "Yes"}, {"rationale", "x"}}, 404);
    h.put(h.base() + "/assessments/A/fluency_9", {{"verdict", "Yes"}, {"rationale", "x"}}, 404);
    h.put(h.base() + "/assessments/A/fluency_1", {{"verdict", "Maybe"}, {"rationale", "x"}}, 400);
    h.put(h.base() + "/assessments/A/fluency_1", {{"verdict", "Yes"}, {"rationale", "  "}}, 400);
    h.put(h.base() + "/assessments/A/fluency_1", {{"verdict", "Yes"}}, 400);
    h.put(h.base() + "/ranking", {{"Story A", 1}, {"Story B", 1}, {"Story C", 3}, {"Story D", 4}}, 400);
    h.put(h.base() + "/ranking", {{"Story A", "first"}}, 400);
    h.put(h.base() + "/attributions/A", {{"attribution", "A robot"}}, 400);
    auto res = h.cli.Put(h.base() + "/ranking", "{oops", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body).contains("error"));
}
