#include "ttcw/llm_client.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <openssl/evp.h>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ttcw/util.h"

namespace ttcw {

using json = nlohmann::json;

void GenParams::validate() const {
    if (!(temperature >= 0.0)) {
        throw PreconditionError("temperature must be >= 0");
    }
    if (max_output_tokens <= 0) {
        throw PreconditionError("max_output_tokens must be positive");
    }
    if (timeout.count() <= 0) {
        throw PreconditionError("timeout must be positive");
    }
}

// ---------------------------------------------------------------------------
// Time sources and rate limiting

TimeSource::Clock::time_point SystemTimeSource::now() { return Clock::now(); }

void SystemTimeSource::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

TimeSource::Clock::time_point ManualTimeSource::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void ManualTimeSource::sleep_for(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    sleeps_.push_back(d);
    now_ += d;
}

void ManualTimeSource::advance(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

std::vector<std::chrono::milliseconds> ManualTimeSource::sleeps() const {
    std::lock_guard lock(mu_);
    return sleeps_;
}

RateLimiter::RateLimiter(int requests_per_minute, std::shared_ptr<TimeSource> time)
    : rpm_(requests_per_minute), time_(std::move(time)) {
    if (rpm_ <= 0) {
        throw PreconditionError("rate limit must be positive");
    }
    if (!time_) {
        time_ = std::make_shared<SystemTimeSource>();
    }
}

void RateLimiter::acquire() {
    constexpr auto window = std::chrono::minutes(1);
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = time_->now();
        while (!issued_.empty() && now - issued_.front() >= window) {
            issued_.pop_front();
        }
        if (static_cast<int>(issued_.size()) < rpm_) {
            issued_.push_back(now);
            return;
        }
        const auto wait =
            std::chrono::ceil<std::chrono::milliseconds>(issued_.front() + window - now);
        // Holding the lock while waiting keeps issue order FIFO across workers.
        time_->sleep_for(std::max(wait, std::chrono::milliseconds(1)));
    }
}

std::chrono::milliseconds RetryPolicy::delay_before_retry(int retry_index) const {
    const double scaled = static_cast<double>(base_delay.count()) * std::pow(multiplier, retry_index);
    const double capped = std::min(scaled, static_cast<double>(max_delay.count()));
    return std::chrono::milliseconds(static_cast<long long>(capped));
}

ResilientClient::ResilientClient(std::shared_ptr<LlmClient> backend, RetryPolicy policy,
                                 std::shared_ptr<RateLimiter> limiter, std::shared_ptr<TimeSource> time)
    : backend_(std::move(backend)), policy_(policy), limiter_(std::move(limiter)), time_(std::move(time)) {
    if (!backend_) {
        throw PreconditionError("ResilientClient needs a backend");
    }
    if (policy_.max_retries < 0) {
        throw PreconditionError("retry cap must be >= 0");
    }
    if (!time_) {
        time_ = std::make_shared<SystemTimeSource>();
    }
}

std::string ResilientClient::complete(std::string_view prompt, const GenParams& params) {
    if (prompt.empty()) {
        throw PreconditionError("complete: prompt is empty");
    }
    params.validate();
    for (int attempt = 0;; ++attempt) {
        if (limiter_) {
            limiter_->acquire();
        }
        try {
            return backend_->complete(prompt, params);
        } catch (const RetryableError& e) {
            if (attempt >= policy_.max_retries) {
                throw TransportError("giving up after " + std::to_string(attempt + 1) + " attempts: " + e.what());
            }
            const auto delay = policy_.delay_before_retry(attempt);
            spdlog::warn("transient failure ({}); retry {}/{} in {} ms", e.what(), attempt + 1,
                         policy_.max_retries, delay.count());
            time_->sleep_for(delay);
        }
    }
}

// ---------------------------------------------------------------------------
// Audit log

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(*path_)) {
        return;
    }
    const auto text = read_file(*path_);
    const auto lines = split_lines(text);
    std::size_t line_no = 0;
    for (auto line : lines) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            AuditRecord r{j.at("timestamp").get<std::string>(), j.at("model").get<std::string>(),
                          j.at("prompt_hash").get<std::string>(), j.at("prompt").get<std::string>(),
                          j.at("response").get<std::string>()};
            index_[{r.model, r.prompt_hash}] = records_.size();
            records_.push_back(std::move(r));
        } catch (const json::exception& e) {
            // A crash mid-append can leave a torn final line; anything else is corruption.
            if (line_no == lines.size()) {
                spdlog::warn("{}:{}: ignoring torn audit record", path_->string(), line_no);
                continue;
            }
            throw ValidationError(path_->string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void AuditLog::append(AuditRecord record) {
    std::lock_guard lock(mu_);
    if (path_) {
        json j = {{"timestamp", record.timestamp},   {"model", record.model},
                  {"prompt_hash", record.prompt_hash}, {"prompt", record.prompt},
                  {"response", record.response}};
        std::ofstream out(*path_, std::ios::app | std::ios::binary);
        if (!out) {
            throw IoError("cannot append to audit log " + path_->string());
        }
        out << j.dump() << '\n';
    }
    index_[{record.model, record.prompt_hash}] = records_.size();
    records_.push_back(std::move(record));
}

std::optional<std::string> AuditLog::lookup(std::string_view model, std::string_view prompt_hash) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(std::pair<std::string, std::string>(model, prompt_hash));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return records_[it->second].response;
}

std::size_t AuditLog::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

std::vector<AuditRecord> AuditLog::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

AuditedClient::AuditedClient(std::shared_ptr<LlmClient> inner, std::shared_ptr<AuditLog> log, bool replay)
    : inner_(std::move(inner)), log_(std::move(log)), replay_(replay) {
    if (!inner_ || !log_) {
        throw PreconditionError("AuditedClient needs a client and a log");
    }
}

std::string AuditedClient::complete(std::string_view prompt, const GenParams& params) {
    auto hash = sha256_hex(prompt);
    if (replay_) {
        if (auto cached = log_->lookup(params.model_name, hash)) {
            return *cached;
        }
    }
    auto response = inner_->complete(prompt, params);
    log_->append({format_timestamp(now_utc()), params.model_name, std::move(hash), std::string(prompt), response});
    return response;
}

// ---------------------------------------------------------------------------
// Scripted mock

ScriptedClient::ScriptedClient(std::vector<MockStep> script, bool cycle) {
    if (script.empty()) {
        throw PreconditionError("ScriptedClient needs at least one step");
    }
    responder_ = [script = std::move(script), cycle](std::string_view, std::size_t i) {
        if (cycle) {
            return script[i % script.size()];
        }
        return script[std::min(i, script.size() - 1)];
    };
}

ScriptedClient::ScriptedClient(Responder responder) : responder_(std::move(responder)) {}

std::shared_ptr<ScriptedClient> ScriptedClient::always(std::string text) {
    return std::make_shared<ScriptedClient>(std::vector<MockStep>{MockStep::reply(std::move(text))});
}

std::string ScriptedClient::complete(std::string_view prompt, const GenParams&) {
    if (prompt.empty()) {
        throw PreconditionError("complete: prompt is empty");
    }
    std::size_t index = 0;
    {
        std::lock_guard lock(mu_);
        index = calls_++;
        prompts_.emplace_back(prompt);
    }
    auto step = responder_(prompt, index);
    switch (step.failure) {
        case MockFailure::None: return step.text;
        case MockFailure::Transport: throw RetryableError("mock: connection reset");
        case MockFailure::RateLimited: throw RetryableError("mock: HTTP 429");
        case MockFailure::Auth: throw AuthError("mock: HTTP 401");
        case MockFailure::Quota: throw QuotaError("mock: quota exhausted");
    }
    return step.text;
}

std::size_t ScriptedClient::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::vector<std::string> ScriptedClient::prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
}

// ---------------------------------------------------------------------------
// Configuration

std::optional<Provider> parse_provider(std::string_view s) {
    if (s == "openai") return Provider::OpenAi;
    if (s == "anthropic") return Provider::Anthropic;
    if (s == "mock") return Provider::Mock;
    return std::nullopt;
}

GenParams ClientConfig::gen_params() const {
    GenParams p;
    p.model_name = model;
    p.temperature = temperature;
    p.max_output_tokens = max_output_tokens;
    p.timeout = timeout;
    return p;
}

namespace {

Provider provider_or_throw(std::string_view s) {
    auto p = parse_provider(s);
    if (!p) {
        throw ValidationError("unknown provider '" + std::string(s) + "' (expected openai, anthropic or mock)");
    }
    return *p;
}

int int_or_throw(const char* what, const std::string& s) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw ValidationError(std::string(what) + ": not an integer: '" + s + "'");
    }
}

}  // namespace

ClientConfig load_client_config(const std::optional<std::filesystem::path>& file,
                                const std::function<const char*(const char*)>& getenv_fn) {
    ClientConfig c;
    if (file) {
        json j;
        try {
            j = json::parse(read_file(*file));
        } catch (const json::parse_error& e) {
            throw ValidationError(file->string() + ": " + e.what());
        }
        try {
            if (j.contains("provider")) c.provider = provider_or_throw(j["provider"].get<std::string>());
            if (j.contains("base_url")) c.base_url = j["base_url"].get<std::string>();
            if (j.contains("api_key")) c.api_key = j["api_key"].get<std::string>();
            if (j.contains("model")) c.model = j["model"].get<std::string>();
            if (j.contains("rpm")) c.rpm = j["rpm"].get<int>();
            if (j.contains("retry_cap")) c.retry_cap = j["retry_cap"].get<int>();
            if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
            if (j.contains("max_output_tokens")) c.max_output_tokens = j["max_output_tokens"].get<int>();
            if (j.contains("timeout_seconds")) {
                c.timeout = std::chrono::milliseconds(
                    static_cast<long long>(j["timeout_seconds"].get<double>() * 1000.0));
            }
            if (j.contains("mock_responses")) c.mock_responses = j["mock_responses"].get<std::vector<std::string>>();
        } catch (const json::type_error& e) {
            throw ValidationError(file->string() + ": " + e.what());
        }
    }
    if (getenv_fn) {
        if (const char* v = getenv_fn("TTCW_PROVIDER")) c.provider = provider_or_throw(v);
        if (const char* v = getenv_fn("TTCW_API_BASE")) c.base_url = v;
        if (const char* v = getenv_fn("TTCW_API_KEY")) c.api_key = v;
        if (const char* v = getenv_fn("TTCW_MODEL")) c.model = v;
        if (const char* v = getenv_fn("TTCW_RPM")) c.rpm = int_or_throw("TTCW_RPM", v);
        if (const char* v = getenv_fn("TTCW_RETRY_CAP")) c.retry_cap = int_or_throw("TTCW_RETRY_CAP", v);
    }
    if (c.base_url.empty()) {
        if (c.provider == Provider::OpenAi) c.base_url = "https://api.openai.com/v1";
        if (c.provider == Provider::Anthropic) c.base_url = "https://api.anthropic.com/v1";
    }
    return c;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpChatClient::HttpChatClient(ClientConfig config) : config_(std::move(config)) {
    const auto& url = config_.base_url;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ValidationError("base_url must include a scheme: '" + url + "'");
    }
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') {
        path_prefix_.pop_back();
    }
}

std::string HttpChatClient::complete(std::string_view prompt, const GenParams& params) {
    if (prompt.empty()) {
        throw PreconditionError("complete: prompt is empty");
    }
    httplib::Client cli(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(params.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(params.timeout - secs);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());

    json body = {{"model", params.model_name},
                 {"max_tokens", params.max_output_tokens},
                 {"temperature", params.temperature},
                 {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})}};
    httplib::Headers headers;
    std::string path = path_prefix_;
    if (config_.provider == Provider::Anthropic) {
        path += "/messages";
        headers.emplace("x-api-key", config_.api_key);
        headers.emplace("anthropic-version", "2023-06-01");
    } else {
        path += "/chat/completions";
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw RetryableError("HTTP request to " + scheme_host_port_ + " failed: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        throw AuthError("HTTP " + std::to_string(status) + ": " + res->body);
    }
    if (status == 429) {
        // OpenAI signals billing exhaustion with 429 as well; that one is permanent.
        if (res->body.find("insufficient_quota") != std::string::npos) {
            throw QuotaError("HTTP 429: " + res->body);
        }
        throw RetryableError("HTTP 429: rate limited");
    }
    if (status >= 500) {
        throw RetryableError("HTTP " + std::to_string(status));
    }
    if (status != 200) {
        throw TransportError("HTTP " + std::to_string(status) + ": " + res->body);
    }

    json reply;
    try {
        reply = json::parse(res->body);
        if (config_.provider == Provider::Anthropic) {
            if (reply.value("stop_reason", "") == "max_tokens") {
                throw TruncationError("completion hit max_output_tokens");
            }
            std::string text;
            for (const auto& block : reply.at("content")) {
                if (block.value("type", "") == "text") {
                    text += block.at("text").get<std::string>();
                }
            }
            return text;
        }
        const auto& choice = reply.at("choices").at(0);
        if (choice.value("finish_reason", "") == "length") {
            throw TruncationError("completion hit max_output_tokens");
        }
        return choice.at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed completion response: ") + e.what());
    }
}

std::shared_ptr<LlmClient> make_client(const ClientConfig& config, std::shared_ptr<AuditLog> audit, bool replay) {
    std::shared_ptr<LlmClient> backend;
    if (config.provider == Provider::Mock) {
        std::vector<MockStep> steps;
        for (const auto& r : config.mock_responses) {
            steps.push_back(MockStep::reply(r));
        }
        if (steps.empty()) {
            steps.push_back(MockStep::reply("The story satisfies the criterion.\nAnswer: Yes"));
        }
        backend = std::make_shared<ScriptedClient>(std::move(steps), true);
    } else {
        backend = std::make_shared<HttpChatClient>(config);
    }
    RetryPolicy policy;
    policy.max_retries = config.retry_cap;
    auto time = std::make_shared<SystemTimeSource>();
    // The offline mock has no server-side ceiling to respect.
    std::shared_ptr<RateLimiter> limiter;
    if (config.provider != Provider::Mock) {
        limiter = std::make_shared<RateLimiter>(config.rpm, time);
    }
    std::shared_ptr<LlmClient> client = std::make_shared<ResilientClient>(backend, policy, limiter, time);
    if (audit) {
        client = std::make_shared<AuditedClient>(client, std::move(audit), replay);
    }
    return client;
}

}  // namespace ttcw
