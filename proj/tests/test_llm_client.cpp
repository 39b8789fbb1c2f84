#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <string>

#include <json.hpp>

#include "helpers.h"
#include "ttcw/llm_client.h"
#include "ttcw/util.h"

using namespace ttcw;
using namespace std::chrono_literals;
using json = nlohmann::json;

namespace {

GenParams params(const std::string& model = "m") {
    GenParams p;
    p.model_name = model;
    p.timeout = 5s;
    return p;
}

ClientConfig openai_config(const testing::LocalServer& server) {
    ClientConfig c;
    c.provider = Provider::OpenAi;
    c.base_url = server.base_url() + "/v1";
    c.api_key = "k";
    c.model = "m";
    return c;
}

std::string openai_reply(const std::string& text, const std::string& finish = "stop") {
    return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}},
                                          {"finish_reason", finish}}})}}
        .dump();
}

}  // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("gen params validation") {
    GenParams p = params();
    CHECK_NOTHROW(p.validate());
    p.temperature = -0.1;
    CHECK_THROWS_AS(p.validate(), PreconditionError);
    p = params();
    p.max_output_tokens = 0;
    CHECK_THROWS_AS(p.validate(), PreconditionError);
}

TEST_CASE("retry delays grow geometrically and cap") {
    RetryPolicy p;
    CHECK(p.delay_before_retry(0) == 500ms);
    CHECK(p.delay_before_retry(1) == 1000ms);
    CHECK(p.delay_before_retry(2) == 2000ms);
    CHECK(p.delay_before_retry(20) == p.max_delay);
}

TEST_CASE("resilient client retries transient failures then succeeds") {
    auto backend = std::make_shared<ScriptedClient>(std::vector<MockStep>{
        MockStep::fail(MockFailure::RateLimited), MockStep::fail(MockFailure::Transport), MockStep::reply("ok")});
    auto time = std::make_shared<ManualTimeSource>();
    ResilientClient client(backend, RetryPolicy{}, nullptr, time);
    CHECK(client.complete("p", params()) == "ok");
    CHECK(backend->calls() == 3);
    CHECK(time->sleeps() == std::vector<std::chrono::milliseconds>{500ms, 1000ms});
}

TEST_CASE("retry cap exhaustion surfaces a transport error") {
    auto backend = std::make_shared<ScriptedClient>(std::vector<MockStep>{MockStep::fail(MockFailure::RateLimited)});
    auto time = std::make_shared<ManualTimeSource>();
    ResilientClient client(backend, RetryPolicy{}, nullptr, time);
    try {
        client.complete("p", params());
        FAIL("expected TransportError");
    } catch (const RetryableError&) {
        FAIL("exhaustion must not stay retryable");
    } catch (const TransportError& e) {
        CHECK(std::string(e.what()).find("4 attempts") != std::string::npos);
    }
    CHECK(backend->calls() == 4);
}

TEST_CASE("auth and quota failures are not retried") {
    for (auto f : {MockFailure::Auth, MockFailure::Quota}) {
        auto backend = std::make_shared<ScriptedClient>(std::vector<MockStep>{MockStep::fail(f)});
        ResilientClient client(backend, RetryPolicy{}, nullptr, std::make_shared<ManualTimeSource>());
        if (f == MockFailure::Auth) {
            CHECK_THROWS_AS(client.complete("p", params()), AuthError);
        } else {
            CHECK_THROWS_AS(client.complete("p", params()), QuotaError);
        }
        CHECK(backend->calls() == 1);
    }
}

TEST_CASE("rate limiter never admits more than the ceiling in any minute") {
    auto time = std::make_shared<ManualTimeSource>();
    RateLimiter limiter(5, time);
    std::vector<TimeSource::Clock::time_point> issued;
    for (int i = 0; i < 23; ++i) {
        limiter.acquire();
        issued.push_back(time->now());
        time->advance(std::chrono::milliseconds(700 * (i % 4)));
    }
    for (std::size_t i = 0; i < issued.size(); ++i) {
        const auto in_window = std::count_if(issued.begin(), issued.end(), [&](auto t) {
            return t >= issued[i] && t - issued[i] < std::chrono::minutes(1);
        });
        CHECK(in_window <= 5);
    }
    CHECK_FALSE(time->sleeps().empty());
    CHECK_THROWS_AS(RateLimiter(0, time), PreconditionError);
}

TEST_CASE("http client: 429 twice then success") {
    std::atomic<int> hits{0};
    testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
            auto body = json::parse(req.body);
            CHECK(body["model"] == "m");
            CHECK(req.get_header_value("Authorization") == "Bearer k");
            if (hits++ < 2) {
                res.status = 429;
                res.set_content(R"({"error":{"type":"rate_limit"}})", "application/json");
                return;
            }
            res.set_content(openai_reply("hello"), "application/json");
        });
    });
    auto backend = std::make_shared<HttpChatClient>(openai_config(server));
    auto time = std::make_shared<ManualTimeSource>();
    ResilientClient client(backend, RetryPolicy{}, nullptr, time);
    CHECK(client.complete("hi", params()) == "hello");
    CHECK(hits == 3);
    CHECK(time->sleeps().size() == 2);
}

TEST_CASE("http client: persistent 429 exhausts a cap of 3") {
    std::atomic<int> hits{0};
    testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.status = 429;
        });
    });
    RetryPolicy policy;
    policy.max_retries = 3;
    ResilientClient client(std::make_shared<HttpChatClient>(openai_config(server)), policy, nullptr,
                           std::make_shared<ManualTimeSource>());
    CHECK_THROWS_AS(client.complete("hi", params()), TransportError);
    CHECK(hits == 4);
}

TEST_CASE("http client: error taxonomy") {
    std::string mode;
    testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            if (mode == "quota") {
                res.status = 429;
                res.set_content(R"({"error":{"code":"insufficient_quota"}})", "application/json");
            } else if (mode == "auth") {
                res.status = 401;
            } else if (mode == "length") {
                res.set_content(openai_reply("cut", "length"), "application/json");
            } else if (mode == "garbage") {
                res.set_content("not json", "text/plain");
            } else {
                res.status = 400;
            }
        });
    });
    HttpChatClient client(openai_config(server));
    mode = "quota";
    CHECK_THROWS_AS(client.complete("hi", params()), QuotaError);
    mode = "auth";
    CHECK_THROWS_AS(client.complete("hi", params()), AuthError);
    mode = "length";
    CHECK_THROWS_AS(client.complete("hi", params()), TruncationError);
    mode = "garbage";
    CHECK_THROWS_AS(client.complete("hi", params()), TransportError);
    mode = "bad";
    try {
        client.complete("hi", params());
        FAIL("expected TransportError");
    } catch (const RetryableError&) {
        FAIL("4xx must not be retryable");
    } catch (const TransportError&) {
    }
}

TEST_CASE("http client: anthropic message shape") {
    testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/messages", [&](const httplib::Request& req, httplib::Response& res) {
            CHECK(req.get_header_value("x-api-key") == "k");
            CHECK(req.has_header("anthropic-version"));
            auto body = json::parse(req.body);
            if (body["max_tokens"] == 1) {
                res.set_content(R"({"content":[],"stop_reason":"max_tokens"})", "application/json");
                return;
            }
            res.set_content(
                R"({"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}],"stop_reason":"end_turn"})",
                "application/json");
        });
    });
    auto cfg = openai_config(server);
    cfg.provider = Provider::Anthropic;
    HttpChatClient client(cfg);
    CHECK(client.complete("hi", params()) == "ab");
    auto p = params();
    p.max_output_tokens = 1;
    CHECK_THROWS_AS(client.complete("hi", p), TruncationError);
}

TEST_CASE("unreachable server is a retryable transport failure") {
    int port = 0;
    { testing::LocalServer probe([](httplib::Server&) {}); port = probe.port(); }
    ClientConfig c;
    c.provider = Provider::OpenAi;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    HttpChatClient client(c);
    CHECK_THROWS_AS(client.complete("hi", params()), RetryableError);
    c.base_url = "localhost:80";
    CHECK_THROWS_AS(HttpChatClient{c}, ValidationError);
}

TEST_CASE("audit log replays without calling the backend") {
    testing::TempDir dir;
    const auto path = dir / "audit.jsonl";
    auto backend = std::make_shared<ScriptedClient>(
        ScriptedClient::Responder([](std::string_view prompt, std::size_t i) {
            return MockStep::reply(std::string(prompt) + "#" + std::to_string(i));
        }));
    {
        AuditedClient client(backend, std::make_shared<AuditLog>(path), true);
        CHECK(client.complete("a", params()) == "a#0");
        CHECK(client.complete("b", params()) == "b#1");
        CHECK(client.complete("a", params()) == "a#0");
        CHECK(client.complete("a", params("other")) == "a#2");
    }
    CHECK(backend->calls() == 3);

    auto log = std::make_shared<AuditLog>(path);
    REQUIRE(log->size() == 3);
    const auto recs = log->records();
    CHECK(recs[0].prompt_hash == sha256_hex("a"));
    CHECK_NOTHROW(parse_timestamp(recs[0].timestamp));

    AuditedClient replaying(backend, log, true);
    CHECK(replaying.complete("b", params()) == "b#1");
    CHECK(backend->calls() == 3);

    AuditedClient recording(backend, log, false);
    CHECK(recording.complete("b", params()) == "b#3");
    CHECK(log->size() == 4);
}

TEST_CASE("audit log tolerates a torn final line only") {
    testing::TempDir dir;
    const auto path = dir / "audit.jsonl";
    const std::string rec = R"({"timestamp":"2023-09-14T17:03:22.125Z","model":"m","prompt_hash":"h","prompt":"p","response":"r"})";
    write_file_atomic(path, rec + "\n{\"timest");
    AuditLog log(path);
    CHECK(log.size() == 1);
    CHECK(log.lookup("m", "h") == std::optional<std::string>("r"));
    write_file_atomic(path, "{\"timest\n" + rec + "\n");
    CHECK_THROWS_AS(AuditLog{path}, ValidationError);
}

TEST_CASE("config precedence: file, then environment") {
    testing::TempDir dir;
    const auto file = dir / "config.json";
    write_file_atomic(file, R"({"provider":"openai","model":"file-model","rpm":10,"retry_cap":5,"api_key":"filekey","timeout_seconds":2.5})");
    std::map<std::string, std::string> env = {{"TTCW_MODEL", "env-model"}, {"TTCW_RPM", "20"}};
    auto getenv_fn = [&](const char* name) -> const char* {
        auto it = env.find(name);
        return it == env.end() ? nullptr : it->second.c_str();
    };
    auto c = load_client_config(file, getenv_fn);
    CHECK(c.provider == Provider::OpenAi);
    CHECK(c.model == "env-model");
    CHECK(c.rpm == 20);
    CHECK(c.retry_cap == 5);
    CHECK(c.api_key == "filekey");
    CHECK(c.timeout == 2500ms);
    CHECK_FALSE(c.base_url.empty());

    auto defaults = load_client_config(std::nullopt, nullptr);
    CHECK(defaults.provider == Provider::Mock);
    CHECK(defaults.retry_cap == 3);

    env["TTCW_RPM"] = "many";
    CHECK_THROWS_AS(load_client_config(file, getenv_fn), ValidationError);
    env.erase("TTCW_RPM");
    env["TTCW_PROVIDER"] = "palm";
    CHECK_THROWS_AS(load_client_config(file, getenv_fn), ValidationError);
}

TEST_CASE("mock provider cycles configured responses") {
    ClientConfig c;
    c.mock_responses = {"one", "two"};
    auto client = make_client(c, nullptr, false);
    CHECK(client->complete("x", params()) == "one");
    CHECK(client->complete("y", params()) == "two");
    CHECK(client->complete("z", params()) == "one");
}
