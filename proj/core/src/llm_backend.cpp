#include "cpgllm/llm_backend.hpp"

#include "cpgllm/io.hpp"

#include <algorithm>
#include <cctype>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(BackendKind kind) noexcept {
    switch (kind) {
        case BackendKind::HttpChat: return "http_chat";
        case BackendKind::Scripted: return "scripted";
        case BackendKind::TruthfulSim: return "truthful_sim";
    }
    return "unknown";
}

std::optional<BackendKind> backend_kind_from_string(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "http_chat" || lower == "http") return BackendKind::HttpChat;
    if (lower == "scripted") return BackendKind::Scripted;
    if (lower == "truthful_sim" || lower == "truthful") return BackendKind::TruthfulSim;
    return std::nullopt;
}

TransportError::TransportError(const std::string& message, int attempts)
    : BackendError(message + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}

ProviderError::ProviderError(int status, std::string body)
    : BackendError("provider returned status " + std::to_string(status) + ": " + body),
      status_(status),
      body_(std::move(body)) {}

// ---- transcript -----------------------------------------------------------

TranscriptLog::TranscriptLog(std::string path) : path_(std::move(path)) {
    std::ofstream touch(path_, std::ios::app);
    if (!touch) throw FileError("cannot open transcript '" + path_ + "'");
}

void TranscriptLog::append(const CompletionRequest& request, const CompletionResult* result, const std::string* error) {
    json line{
        {"case_id", request.metadata.case_id},
        {"method", request.metadata.method},
        {"prompt", request.prompt},
    };
    if (request.metadata.node_id) line["node_id"] = *request.metadata.node_id;
    if (request.metadata.prompt_kind) line["prompt_kind"] = to_string(*request.metadata.prompt_kind);
    if (request.seed) line["seed"] = *request.seed;
    if (result) {
        line["response"] = result->text;
        line["backend"] = to_string(result->backend_kind);
        line["latency_ms"] = std::chrono::duration<double, std::milli>(result->latency).count();
    }
    if (error) line["error"] = *error;
    const std::string text = line.dump() + "\n";
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << text;
}

// ---- base -----------------------------------------------------------------

CompletionResult Backend::complete(const CompletionRequest& request) {
    if (request.prompt.empty()) throw BackendError("completion request has an empty prompt");
    const auto start = Clock::now();
    CompletionResult result;
    try {
        result = do_complete(request);
    } catch (const BackendError& e) {
        if (transcript_) {
            const std::string message = e.what();
            transcript_->append(request, nullptr, &message);
        }
        throw;
    }
    result.latency = std::max(std::chrono::nanoseconds(0),
                              std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start));
    result.backend_kind = kind();
    while (!result.text.empty() && std::isspace(static_cast<unsigned char>(result.text.back()))) result.text.pop_back();
    if (transcript_) transcript_->append(request, &result, nullptr);
    return result;
}

// ---- scripted ---------------------------------------------------------------

std::vector<ScriptedRule> parse_script(std::string_view content) {
    json doc;
    try {
        doc = json::parse(content);
    } catch (const json::parse_error& e) {
        throw ScriptError(std::string("script: ") + e.what());
    }
    if (!doc.is_array()) throw ScriptError("script must be a JSON list of rules");
    std::vector<ScriptedRule> rules;
    for (const auto& item : doc) {
        if (!item.is_object()) throw ScriptError("script rules must be objects");
        for (const auto& [key, value] : item.items()) {
            if (key != "matcher" && key != "response" && key != "priority" && key != "regex")
                throw ScriptError("script rule has unknown field \"" + key + "\"");
        }
        if (!item.contains("matcher") || !item["matcher"].is_string())
            throw ScriptError("script rule needs a string \"matcher\"");
        if (!item.contains("response") || !item["response"].is_string())
            throw ScriptError("script rule needs a string \"response\"");
        ScriptedRule rule;
        rule.matcher = item["matcher"].get<std::string>();
        rule.response = item["response"].get<std::string>();
        if (item.contains("priority")) {
            if (!item["priority"].is_number_integer()) throw ScriptError("script rule priority must be an integer");
            rule.priority = item["priority"].get<int>();
        }
        if (item.contains("regex")) {
            if (!item["regex"].is_boolean()) throw ScriptError("script rule \"regex\" must be a boolean");
            rule.regex = item["regex"].get<bool>();
        }
        rules.push_back(std::move(rule));
    }
    return rules;
}

std::vector<ScriptedRule> load_script(const std::string& path) { return parse_script(read_text_file(path)); }

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules) {
    std::sort(rules.begin(), rules.end(), [](const auto& a, const auto& b) { return a.priority > b.priority; });
    for (std::size_t i = 1; i < rules.size(); ++i) {
        if (rules[i].priority == rules[i - 1].priority)
            throw ScriptError("script rules '" + rules[i - 1].matcher + "' and '" + rules[i].matcher +
                              "' share priority " + std::to_string(rules[i].priority));
    }
    for (auto& rule : rules) {
        if (rule.matcher.empty()) throw ScriptError("script rule matcher must not be empty");
        Compiled c{rule, std::nullopt};
        if (rule.regex) {
            try {
                c.pattern.emplace(rule.matcher, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw ScriptError("invalid script pattern '" + rule.matcher + "': " + e.what());
            }
        }
        rules_.push_back(std::move(c));
    }
}

CompletionResult ScriptedBackend::do_complete(const CompletionRequest& request) {
    for (const auto& c : rules_) {
        const bool hit = c.pattern ? std::regex_search(request.prompt, *c.pattern)
                                   : request.prompt.find(c.rule.matcher) != std::string::npos;
        if (hit) return CompletionResult{c.rule.response, {}, BackendKind::Scripted, std::nullopt};
    }
    throw NoScriptMatchError("no scripted rule matches the prompt");
}

// ---- truthful simulator -----------------------------------------------------

std::string truthful_sentence(Predicate predicate, bool holds) {
    switch (predicate) {
        case Predicate::CovidPositive:
            return holds ? "Yes, the patient has tested positive for COVID-19."
                         : "No, the patient has not tested positive for COVID-19.";
        case Predicate::NeedsHospitalizationOrOxygen:
            return holds ? "Yes, the patient needs hospitalization or increased oxygen."
                         : "No, the patient does not need hospitalization or increased oxygen.";
        case Predicate::HighRisk:
            return holds ? "Yes, the patient is at high risk for severe COVID-19."
                         : "No, the patient is not at high risk for severe COVID-19.";
        case Predicate::SevereRenalOrHepaticImpairment:
            return holds ? "Yes, the patient has severe renal or hepatic impairment."
                         : "No, the patient has neither severe renal nor severe hepatic impairment.";
        case Predicate::UnmanageablePaxlovidInteractions:
            return holds ? "Yes, the patient takes medications that interact with Paxlovid and cannot be adjusted."
                         : "No, the patient's medications can be managed alongside Paxlovid.";
        case Predicate::EgfrAtLeast60:
            return holds ? "Yes, the patient's eGFR is at least 60 ml/min."
                         : "No, the patient's eGFR is below 60 ml/min.";
        case Predicate::RemdesivirAccessible:
            return holds ? "Yes, the patient has access to and authorization for remdesivir."
                         : "No, the patient cannot access or is not authorized for remdesivir.";
        case Predicate::WeightAtLeast40kg:
            return holds ? "Yes, the patient weighs at least 40 kg." : "No, the patient weighs less than 40 kg.";
        case Predicate::AgeAtLeast18:
            return holds ? "Yes, the patient is at least 18 years old." : "No, the patient is younger than 18.";
    }
    throw std::logic_error("unhandled predicate");
}

TruthfulSimBackend::TruthfulSimBackend(PredicateBindings bindings, StructuredPatientFacts facts)
    : bindings_(std::move(bindings)), facts_(facts) {
    validate_facts(facts_);
}

namespace {

std::string first_word_upper(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
    std::string word;
    while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i])))
        word += static_cast<char>(std::toupper(static_cast<unsigned char>(text[i++])));
    return word;
}

}  // namespace

CompletionResult truthful_complete(const PredicateBindings& bindings, const StructuredPatientFacts& facts,
                                   const CompletionRequest& request) {
    const auto& meta = request.metadata;
    if (!meta.node_id || !meta.prompt_kind)
        throw NotAttributableError("prompt carries no node id; the simulator only answers BDT prompts");
    auto predicate = bindings.find(*meta.node_id);
    if (!predicate) throw NotAttributableError("node '" + *meta.node_id + "' has no canonical predicate");
    const bool holds = apply_predicate(*predicate, facts);

    switch (*meta.prompt_kind) {
        case PromptKind::BdtQuestion:
            return {truthful_sentence(*predicate, holds), {}, BackendKind::TruthfulSim, std::nullopt};
        case PromptKind::BdtYesNo: {
            bool affirmative = holds;
            const auto pos = request.prompt.rfind(kResponseMarker);
            if (pos != std::string::npos) {
                const std::string word =
                    first_word_upper(std::string_view(request.prompt).substr(pos + kResponseMarker.size()));
                if (word == "YES") affirmative = true;
                else if (word == "NO") affirmative = false;
            }
            return {affirmative ? "YES" : "NO", {}, BackendKind::TruthfulSim, std::nullopt};
        }
        default:
            throw NotAttributableError(std::string("the simulator cannot answer ") +
                                       std::string(to_string(*meta.prompt_kind)) + " prompts");
    }
}

CompletionResult TruthfulSimBackend::do_complete(const CompletionRequest& request) {
    return truthful_complete(bindings_, facts_, request);
}

// ---- HTTP -------------------------------------------------------------------

namespace {

class ConcurrencyLimit {
public:
    void set_limit(int limit) {
        std::lock_guard lock(mutex_);
        limit_ = std::max(1, limit);
        cv_.notify_all();
    }
    int limit() {
        std::lock_guard lock(mutex_);
        return limit_;
    }
    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return in_flight_ < limit_; });
        ++in_flight_;
    }
    void release() {
        std::lock_guard lock(mutex_);
        --in_flight_;
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int limit_ = 4;
    int in_flight_ = 0;
};

ConcurrencyLimit& http_limit() {
    static ConcurrencyLimit limit;
    return limit;
}

struct SlotGuard {
    SlotGuard() { http_limit().acquire(); }
    ~SlotGuard() { http_limit().release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;
};

// Splits "scheme://host:port/prefix" into the origin and the path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport final : public HttpTransport {
public:
    HttpReply post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                   const std::string& body, std::chrono::milliseconds timeout) override {
        const auto [origin, path] = split_url(url);
        httplib::Client client(origin);
        if (!client.is_valid()) throw TransportFailure("invalid base URL '" + origin + "'", false);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = client.Post(path.empty() ? "/" : path, h, body, "application/json");
        if (!res) {
            const auto err = res.error();
            const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
            throw TransportFailure("HTTP request to " + origin + " failed: " + httplib::to_string(err), timed_out);
        }
        return {res->status, res->body};
    }
};

}  // namespace

std::unique_ptr<HttpTransport> make_default_transport() { return std::make_unique<HttplibTransport>(); }

void set_http_parallelism(int limit) { http_limit().set_limit(limit); }
int http_parallelism() { return http_limit().limit(); }

HttpChatBackend::HttpChatBackend(BackendConfig config, std::string api_key, std::shared_ptr<HttpTransport> transport)
    : config_(std::move(config)), api_key_(std::move(api_key)), transport_(std::move(transport)) {
    validate_config(config_);
    if (api_key_.empty()) throw MissingCredentialsError("LLM_API_KEY is not set");
    if (!transport_) transport_ = make_default_transport();
}

std::string HttpChatBackend::request_body(const CompletionRequest& request) const {
    json body{
        {"model", config_.model_id},
        {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", config_.temperature},
    };
    if (auto seed = request.seed ? request.seed : config_.seed) body["seed"] = *seed;
    return body.dump();
}

CompletionResult HttpChatBackend::do_complete(const CompletionRequest& request) {
    std::string url = config_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    url += "/chat/completions";
    std::vector<std::pair<std::string, std::string>> headers{{"Authorization", "Bearer " + api_key_}};
    for (const auto& [k, v] : config_.extra_headers) headers.emplace_back(k, v);
    const std::string body = request_body(request);

    const int attempts = 1 + config_.max_retries;
    std::string last_failure;
    bool last_timed_out = false;
    std::optional<HttpReply> last_reply;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(config_.backoff_initial * (1 << (attempt - 1)));
        HttpReply reply;
        try {
            SlotGuard slot;
            reply = transport_->post(url, headers, body, config_.timeout);
        } catch (const TransportFailure& e) {
            last_failure = e.what();
            last_timed_out = e.timed_out();
            last_reply.reset();
            continue;
        }
        if (reply.status == 429 || reply.status >= 500) {
            last_reply = reply;
            continue;
        }
        if (reply.status < 200 || reply.status >= 300) throw ProviderError(reply.status, reply.body);

        json doc;
        try {
            doc = json::parse(reply.body);
        } catch (const json::parse_error&) {
            throw ProviderError(reply.status, "malformed JSON body: " + reply.body);
        }
        const json* content = nullptr;
        if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
            const auto& choice = doc["choices"][0];
            if (choice.contains("message") && choice["message"].contains("content") &&
                choice["message"]["content"].is_string())
                content = &choice["message"]["content"];
        }
        if (!content) throw ProviderError(reply.status, "response has no choices[0].message.content: " + reply.body);
        return CompletionResult{content->get<std::string>(), {}, BackendKind::HttpChat, reply.body};
    }
    if (last_reply) throw ProviderError(last_reply->status, last_reply->body);
    if (last_timed_out) throw TimeoutError(last_failure, attempts);
    throw TransportError(last_failure, attempts);
}

// ---- construction -------------------------------------------------------------

void validate_config(const BackendConfig& config) {
    if (!(config.temperature >= 0.0 && config.temperature <= 2.0))
        throw BackendConfigError("temperature must be within [0, 2]");
    if (config.max_retries < 0 || config.max_retries > kMaxRetriesLimit)
        throw BackendConfigError("max_retries must be within [0, 5]");
    if (config.timeout.count() <= 0) throw BackendConfigError("timeout must be positive");
    if (config.kind == BackendKind::HttpChat) {
        if (config.base_url.empty()) throw BackendConfigError("HTTP_CHAT needs a base_url");
        if (config.model_id.empty()) throw BackendConfigError("HTTP_CHAT needs a model_id");
    }
}

BackendConfig apply_environment(BackendConfig config) {
    if (const char* url = std::getenv("LLM_BASE_URL"); url && *url) config.base_url = url;
    if (const char* model = std::getenv("LLM_MODEL_ID"); model && *model) config.model_id = model;
    return config;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config, const BackendContext& context) {
    validate_config(config);
    std::unique_ptr<Backend> backend;
    switch (config.kind) {
        case BackendKind::HttpChat: {
            const char* key = std::getenv("LLM_API_KEY");
            if (!key || !*key) throw MissingCredentialsError("LLM_API_KEY is not set");
            backend = std::make_unique<HttpChatBackend>(
                config, key, context.transport ? context.transport : std::shared_ptr<HttpTransport>(make_default_transport()));
            break;
        }
        case BackendKind::Scripted:
            backend = std::make_unique<ScriptedBackend>(context.script);
            break;
        case BackendKind::TruthfulSim:
            if (!context.bindings) throw BackendConfigError("TRUTHFUL_SIM needs predicate bindings");
            if (!context.facts) throw BackendConfigError("TRUTHFUL_SIM needs structured patient facts");
            backend = std::make_unique<TruthfulSimBackend>(*context.bindings, *context.facts);
            break;
    }
    if (context.transcript) backend->set_transcript(context.transcript);
    return backend;
}

}  // namespace cpg
