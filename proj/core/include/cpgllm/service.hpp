#pragma once

#include "cpgllm/dataset.hpp"
#include "cpgllm/guideline.hpp"
#include "cpgllm/llm_backend.hpp"
#include "cpgllm/prompt.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

namespace cpg {

inline constexpr std::size_t kMaxEvaluateCases = 200;

struct ServiceConfig {
    std::string guideline_path;
    std::string bindings_path;
    std::string templates_path;
    std::string corpus_path;  // optional
    std::string static_dir;   // optional; served at "/"
    std::string cors_origin = "*";
    int evaluate_parallelism = 4;
    std::shared_ptr<HttpTransport> transport;  // HTTP_CHAT transport override
};

struct ServiceResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

/// JSON API over the library. `handle` is the whole request logic; `serve`
/// only adapts it to an HTTP server.
class Service {
public:
    Service() = default;

    /// Loads all data files; until this succeeds every API call answers 503.
    void initialize(const ServiceConfig& config);
    bool ready() const;
    const ServiceConfig& config() const noexcept { return config_; }

    /// `target` is the request path, optionally with a query string.
    ServiceResponse handle(std::string_view method, std::string_view target, std::string_view body) const;

private:
    struct State {
        std::string guideline_text;
        GuidelineTree tree;
        PredicateBindings bindings;
        TemplateSet templates;
        Corpus corpus;
        bool has_corpus = false;
    };

    std::shared_ptr<const State> state() const;

    ServiceResponse recommend(const State& s, std::string_view body) const;
    ServiceResponse evaluate(const State& s, std::string_view body) const;
    ServiceResponse corpus(const State& s, const std::map<std::string, std::string>& query) const;

    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::shared_ptr<const State> state_;
};

/// Blocks serving `service` on host:port until the process is stopped.
/// Throws std::runtime_error when the address cannot be bound.
void serve(const Service& service, const std::string& host, int port);

/// JSON Schema documents for request and response bodies.
std::string api_schema_json();

}  // namespace cpg
