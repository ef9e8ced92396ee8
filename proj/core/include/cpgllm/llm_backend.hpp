#pragma once

#include "cpgllm/guideline.hpp"
#include "cpgllm/prompt.hpp"

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cpg {

enum class BackendKind { HttpChat, Scripted, TruthfulSim };

std::string_view to_string(BackendKind kind) noexcept;
std::optional<BackendKind> backend_kind_from_string(std::string_view name);

struct BackendConfig {
    BackendKind kind = BackendKind::Scripted;
    std::string base_url;  // HTTP_CHAT only
    std::string model_id;
    double temperature = 0.0;
    std::optional<std::int64_t> seed;
    std::chrono::milliseconds timeout{60'000};
    int max_retries = 3;
    std::chrono::milliseconds backoff_initial{500};
    std::map<std::string, std::string> extra_headers;
};

inline constexpr int kMaxRetriesLimit = 5;

// ---- errors -----------------------------------------------------------

class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BackendConfigError : public BackendError {
public:
    using BackendError::BackendError;
};

class MissingCredentialsError : public BackendError {
public:
    using BackendError::BackendError;
};

class TransportError : public BackendError {
public:
    TransportError(const std::string& message, int attempts);
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

class ProviderError : public BackendError {
public:
    ProviderError(int status, std::string body);
    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

class ScriptError : public BackendError {
public:
    using BackendError::BackendError;
};

class NoScriptMatchError : public BackendError {
public:
    using BackendError::BackendError;
};

class NotAttributableError : public BackendError {
public:
    using BackendError::BackendError;
};

// ---- requests ---------------------------------------------------------

struct RequestMetadata {
    std::string case_id;
    std::string method;
    std::optional<std::string> node_id;
    std::optional<PromptKind> prompt_kind;
};

struct CompletionRequest {
    std::string prompt;
    std::optional<std::int64_t> seed;
    RequestMetadata metadata;
};

struct CompletionResult {
    std::string text;
    std::chrono::nanoseconds latency{0};
    BackendKind backend_kind = BackendKind::Scripted;
    std::optional<std::string> raw_provider_payload;
};

/// Appends one JSON object per completion (request, response or error).
class TranscriptLog {
public:
    explicit TranscriptLog(std::string path);
    void append(const CompletionRequest& request, const CompletionResult* result, const std::string* error);
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
    std::mutex mutex_;
};

class Backend {
public:
    virtual ~Backend() = default;

    /// Validates the request, times the call, strips trailing whitespace from
    /// the reply and records the exchange in the transcript when one is set.
    CompletionResult complete(const CompletionRequest& request);

    virtual BackendKind kind() const noexcept = 0;

    void set_transcript(std::shared_ptr<TranscriptLog> log) { transcript_ = std::move(log); }

protected:
    virtual CompletionResult do_complete(const CompletionRequest& request) = 0;

private:
    std::shared_ptr<TranscriptLog> transcript_;
};

// ---- scripted ---------------------------------------------------------

struct ScriptedRule {
    std::string matcher;
    std::string response;
    int priority = 0;
    bool regex = false;
};

/// JSON list of {"matcher", "response", "priority"?, "regex"?}. Two rules
/// with the same priority are rejected.
std::vector<ScriptedRule> parse_script(std::string_view content);
std::vector<ScriptedRule> load_script(const std::string& path);

class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptedRule> rules);
    BackendKind kind() const noexcept override { return BackendKind::Scripted; }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override;

private:
    struct Compiled {
        ScriptedRule rule;
        std::optional<std::regex> pattern;
    };
    std::vector<Compiled> rules_;  // highest priority first
};

// ---- truthful simulator -------------------------------------------------

/// Sentence the simulator uses to affirm or deny a predicate.
std::string truthful_sentence(Predicate predicate, bool holds);

/// Answers BDT prompts from structured facts. Question prompts get a
/// one-sentence affirmation or denial; YES/NO prompts get exactly "YES" or
/// "NO" consistent with the embedded response.
class TruthfulSimBackend final : public Backend {
public:
    TruthfulSimBackend(PredicateBindings bindings, StructuredPatientFacts facts);
    BackendKind kind() const noexcept override { return BackendKind::TruthfulSim; }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override;

private:
    PredicateBindings bindings_;
    StructuredPatientFacts facts_;
};

CompletionResult truthful_complete(const PredicateBindings& bindings, const StructuredPatientFacts& facts,
                                   const CompletionRequest& request);

// ---- HTTP chat ----------------------------------------------------------

struct HttpReply {
    int status = 0;
    std::string body;
};

/// Thrown by transports when no HTTP reply was obtained.
class TransportFailure : public std::runtime_error {
public:
    TransportFailure(const std::string& message, bool timed_out)
        : std::runtime_error(message), timed_out_(timed_out) {}
    bool timed_out() const noexcept { return timed_out_; }

private:
    bool timed_out_;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpReply post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                           const std::string& body, std::chrono::milliseconds timeout) = 0;
};

std::unique_ptr<HttpTransport> make_default_transport();

/// Process-wide bound on in-flight HTTP completions (default 4).
void set_http_parallelism(int limit);
int http_parallelism();

class HttpChatBackend final : public Backend {
public:
    HttpChatBackend(BackendConfig config, std::string api_key,
                    std::shared_ptr<HttpTransport> transport = make_default_transport());
    BackendKind kind() const noexcept override { return BackendKind::HttpChat; }

    /// Exact request body sent for a request (prompt bytes untouched).
    std::string request_body(const CompletionRequest& request) const;

protected:
    CompletionResult do_complete(const CompletionRequest& request) override;

private:
    BackendConfig config_;
    std::string api_key_;
    std::shared_ptr<HttpTransport> transport_;
};

// ---- construction -------------------------------------------------------

void validate_config(const BackendConfig& config);

/// Applies LLM_BASE_URL and LLM_MODEL_ID overrides.
BackendConfig apply_environment(BackendConfig config);

/// Inputs a backend may need besides its config.
struct BackendContext {
    const PredicateBindings* bindings = nullptr;
    std::optional<StructuredPatientFacts> facts;
    std::vector<ScriptedRule> script;
    std::shared_ptr<HttpTransport> transport;
    std::shared_ptr<TranscriptLog> transcript;
};

/// HTTP_CHAT reads LLM_API_KEY; throws MissingCredentialsError when unset.
std::unique_ptr<Backend> make_backend(const BackendConfig& config, const BackendContext& context);

}  // namespace cpg
