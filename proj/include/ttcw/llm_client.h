#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ttcw/errors.h"

namespace ttcw {

struct GenParams {
    std::string model_name;
    double temperature = 1.0;
    int max_output_tokens = 4096;
    std::chrono::milliseconds timeout{std::chrono::seconds(120)};

    /// Throws PreconditionError on negative temperature or non-positive limits.
    void validate() const;
};

// Client failure taxonomy. Callers distinguish by type.
class ClientError : public Error {
public:
    using Error::Error;
};

class TransportError : public ClientError {
public:
    using ClientError::ClientError;
};

/// Transient failure (HTTP 429 / 5xx / connection reset). ResilientClient
/// retries these; once the cap is hit it throws a plain TransportError.
class RetryableError : public TransportError {
public:
    using TransportError::TransportError;
};

class AuthError : public ClientError {
public:
    using ClientError::ClientError;
};

class QuotaError : public ClientError {
public:
    using ClientError::ClientError;
};

/// The backend stopped at the output-token limit.
class TruncationError : public ClientError {
public:
    using ClientError::ClientError;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(std::string_view prompt, const GenParams& params) = 0;
};

/// Wall clock and sleeping, injectable so retry and rate-limit behaviour can
/// be tested without real waits.
class TimeSource {
public:
    using Clock = std::chrono::steady_clock;
    virtual ~TimeSource() = default;
    virtual Clock::time_point now() = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemTimeSource final : public TimeSource {
public:
    Clock::time_point now() override;
    void sleep_for(std::chrono::milliseconds d) override;
};

/// Fake time: sleep_for advances the clock instantly.
class ManualTimeSource final : public TimeSource {
public:
    Clock::time_point now() override;
    void sleep_for(std::chrono::milliseconds d) override;
    void advance(std::chrono::milliseconds d);
    std::vector<std::chrono::milliseconds> sleeps() const;

private:
    mutable std::mutex mu_;
    Clock::time_point now_{};
    std::vector<std::chrono::milliseconds> sleeps_;
};

/// Sliding-window limiter: at most `requests_per_minute` acquisitions in any
/// 60-second window. acquire() blocks (via the time source) until a slot frees.
class RateLimiter {
public:
    RateLimiter(int requests_per_minute, std::shared_ptr<TimeSource> time);
    void acquire();
    int ceiling() const { return rpm_; }

private:
    int rpm_;
    std::shared_ptr<TimeSource> time_;
    std::mutex mu_;
    std::deque<TimeSource::Clock::time_point> issued_;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{std::chrono::seconds(30)};

    std::chrono::milliseconds delay_before_retry(int retry_index) const;
};

/// Decorator adding rate limiting and exponential-backoff retries around a
/// backend. Auth and quota failures are not retried.
class ResilientClient final : public LlmClient {
public:
    ResilientClient(std::shared_ptr<LlmClient> backend, RetryPolicy policy,
                    std::shared_ptr<RateLimiter> limiter = nullptr,
                    std::shared_ptr<TimeSource> time = nullptr);
    std::string complete(std::string_view prompt, const GenParams& params) override;

private:
    std::shared_ptr<LlmClient> backend_;
    RetryPolicy policy_;
    std::shared_ptr<RateLimiter> limiter_;
    std::shared_ptr<TimeSource> time_;
};

std::string sha256_hex(std::string_view data);

struct AuditRecord {
    std::string timestamp;  // ISO-8601 UTC
    std::string model;
    std::string prompt_hash;
    std::string prompt;
    std::string response;
};

/// Append-only JSONL log of prompt/response pairs keyed by (model, sha256 of
/// prompt). Existing records are loaded on open. Appends are serialized.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path path);
    /// In-memory log (nothing persisted).
    AuditLog() = default;

    void append(AuditRecord record);
    std::optional<std::string> lookup(std::string_view model, std::string_view prompt_hash) const;
    std::size_t size() const;
    std::vector<AuditRecord> records() const;

private:
    std::optional<std::filesystem::path> path_;
    mutable std::mutex mu_;
    std::vector<AuditRecord> records_;
    std::map<std::pair<std::string, std::string>, std::size_t, std::less<>> index_;
};

/// Records every completion in an AuditLog. With replay enabled, a prompt
/// already present in the log is answered from it without calling the inner
/// client, which makes interrupted suites resumable.
class AuditedClient final : public LlmClient {
public:
    AuditedClient(std::shared_ptr<LlmClient> inner, std::shared_ptr<AuditLog> log, bool replay);
    std::string complete(std::string_view prompt, const GenParams& params) override;

private:
    std::shared_ptr<LlmClient> inner_;
    std::shared_ptr<AuditLog> log_;
    bool replay_;
};

enum class MockFailure { None, Transport, RateLimited, Auth, Quota };

struct MockStep {
    std::string text;
    MockFailure failure = MockFailure::None;

    static MockStep reply(std::string t) { return {std::move(t), MockFailure::None}; }
    static MockStep fail(MockFailure f) { return {{}, f}; }
};

/// Offline client for tests and dry runs. Either replays a fixed script
/// (cycling when `cycle` is set, otherwise repeating the last step) or
/// delegates to a responder function of (prompt, zero-based call index).
class ScriptedClient final : public LlmClient {
public:
    using Responder = std::function<MockStep(std::string_view prompt, std::size_t call_index)>;

    explicit ScriptedClient(std::vector<MockStep> script, bool cycle = false);
    explicit ScriptedClient(Responder responder);

    static std::shared_ptr<ScriptedClient> always(std::string text);

    std::string complete(std::string_view prompt, const GenParams& params) override;

    std::size_t calls() const;
    std::vector<std::string> prompts() const;

private:
    Responder responder_;
    mutable std::mutex mu_;
    std::size_t calls_ = 0;
    std::vector<std::string> prompts_;
};

enum class Provider { OpenAi, Anthropic, Mock };

std::optional<Provider> parse_provider(std::string_view s);

struct ClientConfig {
    Provider provider = Provider::Mock;
    std::string base_url;
    std::string api_key;
    std::string model = "mock";
    int rpm = 60;
    int retry_cap = 3;
    double temperature = 1.0;
    int max_output_tokens = 4096;
    std::chrono::milliseconds timeout{std::chrono::seconds(120)};
    std::vector<std::string> mock_responses;  // Mock provider only; cycled

    GenParams gen_params() const;
};

/// Reads the JSON config file (if given), then overlays TTCW_PROVIDER,
/// TTCW_API_BASE, TTCW_API_KEY, TTCW_MODEL, TTCW_RPM, TTCW_RETRY_CAP from the
/// environment. Command-line flags are applied by the caller afterwards.
ClientConfig load_client_config(const std::optional<std::filesystem::path>& file,
                                const std::function<const char*(const char*)>& getenv_fn);

/// Chat-completions client over HTTP(S). OpenAi speaks
/// POST {base}/chat/completions, Anthropic speaks POST {base}/messages.
class HttpChatClient final : public LlmClient {
public:
    explicit HttpChatClient(ClientConfig config);
    std::string complete(std::string_view prompt, const GenParams& params) override;

private:
    ClientConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Full client stack for a config: backend, retries + rate limit, and an
/// audit log when `audit` is non-null.
std::shared_ptr<LlmClient> make_client(const ClientConfig& config, std::shared_ptr<AuditLog> audit,
                                       bool replay);

}  // namespace ttcw
