#include "cpgllm/service.hpp"

#include "cpgllm/evaluation.hpp"
#include "cpgllm/io.hpp"
#include "cpgllm/strategies.hpp"

#include <chrono>
#include <set>
#include <stdexcept>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

namespace {

/// Request body rejected with 422.
class InvalidRequest : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

ServiceResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

ServiceResponse error_response(int status, std::string_view code, std::string_view message) {
    return json_response(status, json{{"error", {{"code", code}, {"message", message}}}});
}

json parse_body(std::string_view body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw InvalidRequest(std::string("body is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InvalidRequest("body must be a JSON object");
    return doc;
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw InvalidRequest("unknown field \"" + key + "\" in " + std::string(where));
    }
}

MethodKind parse_method(const json& value) {
    if (!value.is_string()) throw InvalidRequest("method must be a string");
    auto m = method_from_string(value.get<std::string>());
    if (!m) throw InvalidRequest("unknown method \"" + value.get<std::string>() + "\"");
    return *m;
}

BackendConfig parse_backend(const json& doc) {
    BackendConfig config;
    config.kind = BackendKind::TruthfulSim;
    auto it = doc.find("backend");
    if (it == doc.end()) return config;
    const json& b = *it;
    if (!b.is_object()) throw InvalidRequest("backend must be an object");
    reject_unknown(b, {"kind", "model_id", "temperature", "seed"}, "backend");
    if (!b.contains("kind") || !b["kind"].is_string()) throw InvalidRequest("backend.kind must be a string");
    auto kind = backend_kind_from_string(b["kind"].get<std::string>());
    if (!kind) throw InvalidRequest("unknown backend kind \"" + b["kind"].get<std::string>() + "\"");
    config.kind = *kind;
    if (config.kind == BackendKind::HttpChat) config = apply_environment(config);
    if (b.contains("model_id")) {
        if (!b["model_id"].is_string()) throw InvalidRequest("backend.model_id must be a string");
        config.model_id = b["model_id"].get<std::string>();
    }
    if (b.contains("temperature")) {
        if (!b["temperature"].is_number()) throw InvalidRequest("backend.temperature must be a number");
        config.temperature = b["temperature"].get<double>();
    }
    if (b.contains("seed") && !b["seed"].is_null()) {
        if (!b["seed"].is_number_integer()) throw InvalidRequest("backend.seed must be an integer");
        config.seed = b["seed"].get<std::int64_t>();
    }
    try {
        validate_config(config);
    } catch (const BackendConfigError& e) {
        throw InvalidRequest(e.what());
    }
    return config;
}

std::vector<ScriptedRule> parse_request_script(const json& doc) {
    auto it = doc.find("script");
    if (it == doc.end()) return {};
    try {
        auto rules = parse_script(it->dump());
        ScriptedBackend check(rules);
        return rules;
    } catch (const ScriptError& e) {
        throw InvalidRequest(e.what());
    }
}

std::map<std::string, std::string> parse_query(std::string_view query) {
    std::map<std::string, std::string> out;
    std::size_t start = 0;
    while (start < query.size()) {
        auto end = query.find('&', start);
        if (end == std::string_view::npos) end = query.size();
        const auto pair = query.substr(start, end - start);
        const auto eq = pair.find('=');
        if (!pair.empty())
            out[httplib::detail::decode_url(std::string(pair.substr(0, eq)), true)] =
                eq == std::string_view::npos ? "" : httplib::detail::decode_url(std::string(pair.substr(eq + 1)), true);
        start = end + 1;
    }
    return out;
}

json case_to_json(const PatientCase& c) {
    return json{
        {"id", c.id},
        {"description", c.description},
        {"gold_label", c.gold_label},
        {"difficulty", to_string(c.difficulty)},
        {"facts", c.facts ? facts_to_json(*c.facts) : json(nullptr)},
    };
}

}  // namespace

void Service::initialize(const ServiceConfig& config) {
    auto s = std::make_shared<State>();
    s->guideline_text = read_text_file(config.guideline_path);
    s->tree = parse_guideline(s->guideline_text);
    s->bindings = load_bindings(config.bindings_path);
    s->templates = load_templates(config.templates_path, true);
    if (!config.corpus_path.empty()) {
        s->corpus = load_corpus(config.corpus_path, leaf_labels(s->tree));
        s->has_corpus = true;
    }
    std::lock_guard lock(mutex_);
    config_ = config;
    state_ = std::move(s);
}

bool Service::ready() const { return state() != nullptr; }

std::shared_ptr<const Service::State> Service::state() const {
    std::lock_guard lock(mutex_);
    return state_;
}

ServiceResponse Service::handle(std::string_view method, std::string_view target, std::string_view body) const {
    std::string_view path = target;
    std::string_view query;
    if (auto q = target.find('?'); q != std::string_view::npos) {
        path = target.substr(0, q);
        query = target.substr(q + 1);
    }
    if (path.substr(0, 5) != "/api/") return error_response(404, "not_found", "no route for " + std::string(path));

    const auto s = state();
    if (!s) return error_response(503, "not_ready", "service is not initialized");

    auto only = [&](std::string_view allowed) -> std::optional<ServiceResponse> {
        if (method == allowed) return std::nullopt;
        return error_response(405, "method_not_allowed", std::string(method) + " is not allowed on " + std::string(path));
    };
    try {
        if (path == "/api/health") {
            if (auto r = only("GET")) return *r;
            return json_response(200, json{{"status", "ok"}});
        }
        if (path == "/api/methods") {
            if (auto r = only("GET")) return *r;
            json methods = json::array();
            for (MethodKind m : all_methods()) methods.push_back(to_string(m));
            return json_response(200, methods);
        }
        if (path == "/api/guideline") {
            if (auto r = only("GET")) return *r;
            return {200, s->guideline_text, "application/json"};
        }
        if (path == "/api/schema") {
            if (auto r = only("GET")) return *r;
            return {200, api_schema_json(), "application/json"};
        }
        if (path == "/api/corpus") {
            if (auto r = only("GET")) return *r;
            return corpus(*s, parse_query(query));
        }
        if (path == "/api/recommend") {
            if (auto r = only("POST")) return *r;
            return recommend(*s, body);
        }
        if (path == "/api/evaluate") {
            if (auto r = only("POST")) return *r;
            return evaluate(*s, body);
        }
    } catch (const InvalidRequest& e) {
        return error_response(422, "invalid_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal_error", e.what());
    }
    return error_response(404, "not_found", "no route for " + std::string(path));
}

ServiceResponse Service::corpus(const State& s, const std::map<std::string, std::string>& query) const {
    for (const auto& [key, value] : query)
        if (key != "difficulty") throw InvalidRequest("unknown query parameter \"" + key + "\"");
    Corpus selected = s.corpus;
    if (auto it = query.find("difficulty"); it != query.end() && !it->second.empty()) {
        auto d = difficulty_from_string(it->second);
        if (!d) throw InvalidRequest("difficulty must be easy, medium or hard");
        selected = stratify(s.corpus, *d);
    }
    json cases = json::array();
    for (const auto& c : selected.cases) cases.push_back(case_to_json(c));
    return json_response(200, json{{"cases", std::move(cases)}});
}

ServiceResponse Service::recommend(const State& s, std::string_view body) const {
    const json doc = parse_body(body);
    reject_unknown(doc, {"patient_description", "method", "backend", "facts", "script"}, "request");
    if (!doc.contains("patient_description") || !doc["patient_description"].is_string())
        throw InvalidRequest("patient_description must be a string");
    const auto description = doc["patient_description"].get<std::string>();
    if (description.find_first_not_of(" \t\r\n") == std::string::npos)
        throw InvalidRequest("patient_description must not be empty");
    if (!doc.contains("method")) throw InvalidRequest("method is required");
    const MethodKind method = parse_method(doc["method"]);
    const BackendConfig backend_config = parse_backend(doc);

    BackendContext context;
    context.bindings = &s.bindings;
    context.transport = config_.transport;
    context.script = parse_request_script(doc);
    if (auto it = doc.find("facts"); it != doc.end() && !it->is_null()) {
        try {
            context.facts = facts_from_json(*it);
        } catch (const std::exception& e) {
            throw InvalidRequest(std::string("facts: ") + e.what());
        }
    }
    if (backend_config.kind == BackendKind::TruthfulSim && !context.facts)
        throw InvalidRequest("the truthful_sim backend needs structured \"facts\"");

    std::unique_ptr<Backend> backend;
    try {
        backend = make_backend(backend_config, context);
    } catch (const MissingCredentialsError& e) {
        return error_response(502, "backend_unavailable", e.what());
    } catch (const BackendError& e) {
        throw InvalidRequest(e.what());
    }

    RunOptions options{backend_config.seed, "api", {}};
    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&start] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    };
    try {
        const auto trace = run_method(method, s.tree, description, s.templates, *backend, options);
        return json_response(200, json{
                                      {"recommendation", trace.final_leaf->label},
                                      {"leaf_id", trace.final_leaf->id},
                                      {"failure", nullptr},
                                      {"trace", trace_to_json(trace)},
                                      {"latency_ms", elapsed_ms()},
                                  });
    } catch (const StrategyError& e) {
        const int status = dynamic_cast<const StrategyBackendFailure*>(&e) ? 502 : 200;
        return json_response(status, json{
                                         {"recommendation", nullptr},
                                         {"leaf_id", nullptr},
                                         {"failure", {{"kind", e.kind()}, {"message", e.what()}}},
                                         {"trace", trace_to_json(e.trace())},
                                         {"latency_ms", elapsed_ms()},
                                     });
    } catch (const PromptError& e) {
        throw InvalidRequest(e.what());
    }
}

ServiceResponse Service::evaluate(const State& s, std::string_view body) const {
    const json doc = parse_body(body);
    reject_unknown(doc, {"corpus", "methods", "seeds", "backend", "script"}, "request");

    Corpus corpus;
    const auto labels = leaf_labels(s.tree);
    auto it = doc.find("corpus");
    try {
        if (it == doc.end() || it->is_null()) {
            if (!s.has_corpus) throw InvalidRequest("no corpus loaded; pass \"corpus\"");
            corpus = s.corpus;
        } else if (it->is_string()) {
            corpus = load_corpus(it->get<std::string>(), labels);
        } else if (it->is_array()) {
            std::string lines;
            for (const auto& c : *it) lines += c.dump() + "\n";
            corpus = parse_corpus(lines, labels);
        } else {
            throw InvalidRequest("corpus must be a path or a list of cases");
        }
    } catch (const CorpusError& e) {
        throw InvalidRequest(e.what());
    } catch (const FileError& e) {
        throw InvalidRequest(e.what());
    }
    if (corpus.cases.size() > kMaxEvaluateCases)
        throw InvalidRequest("corpus has " + std::to_string(corpus.cases.size()) + " cases; the limit is " +
                             std::to_string(kMaxEvaluateCases));
    if (corpus.cases.empty()) throw InvalidRequest("corpus is empty");

    RunConfig config;
    config.parallelism = config_.evaluate_parallelism;
    if (!doc.contains("methods") || !doc["methods"].is_array()) throw InvalidRequest("methods must be a list");
    config.methods.clear();
    for (const auto& m : doc["methods"]) config.methods.push_back(parse_method(m));
    if (auto seeds = doc.find("seeds"); seeds != doc.end()) {
        if (!seeds->is_array()) throw InvalidRequest("seeds must be a list of integers");
        config.seeds.clear();
        for (const auto& v : *seeds) {
            if (!v.is_number_integer()) throw InvalidRequest("seeds must be a list of integers");
            config.seeds.push_back(v.get<std::int64_t>());
        }
    }
    config.backend = parse_backend(doc);
    try {
        validate_run_config(config);
    } catch (const EvaluationError& e) {
        throw InvalidRequest(e.what());
    }

    BenchmarkContext context;
    context.bindings = &s.bindings;
    context.script = parse_request_script(doc);
    context.transport = config_.transport;
    try {
        const auto outcome = cpg::evaluate(corpus, config, s.tree, s.templates, context);
        json report = outcome_to_json(outcome, config);
        json predictions = json::array();
        for (const auto& r : outcome.records) predictions.push_back(record_to_json(r));
        report["predictions"] = std::move(predictions);
        return json_response(200, report);
    } catch (const MissingCredentialsError& e) {
        return error_response(502, "backend_unavailable", e.what());
    } catch (const BackendError& e) {
        throw InvalidRequest(e.what());
    }
}

void serve(const Service& service, const std::string& host, int port) {
    httplib::Server server;
    const std::string origin = service.config().cors_origin;

    auto adapt = [&service, origin](const httplib::Request& req, httplib::Response& res) {
        std::string target = req.path;
        if (!req.params.empty()) {
            std::string query;
            for (const auto& [k, v] : req.params)
                query += (query.empty() ? "" : "&") + httplib::detail::encode_query_param(k) + "=" +
                         httplib::detail::encode_query_param(v);
            target += "?" + query;
        }
        const auto reply = service.handle(req.method, target, req.body);
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type);
        if (!origin.empty()) res.set_header("Access-Control-Allow-Origin", origin);
    };
    server.Get(R"(/api/.*)", adapt);
    server.Post(R"(/api/.*)", adapt);
    server.Options(R"(/api/.*)", [origin](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        if (!origin.empty()) {
            res.set_header("Access-Control-Allow-Origin", origin);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        }
    });
    if (!service.config().static_dir.empty() && !server.set_mount_point("/", service.config().static_dir))
        throw std::runtime_error("static directory '" + service.config().static_dir + "' does not exist");
    if (!server.listen(host, port))
        throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

std::string api_schema_json() {
    static const json schema = [] {
        const json backend{
            {"type", "object"},
            {"additionalProperties", false},
            {"required", {"kind"}},
            {"properties",
             {{"kind", {{"enum", {"http_chat", "scripted", "truthful_sim"}}}},
              {"model_id", {{"type", "string"}}},
              {"temperature", {{"type", "number"}, {"minimum", 0}, {"maximum", 2}}},
              {"seed", {{"type", {"integer", "null"}}}}}},
        };
        const json method{{"enum", {"bdt", "cot_fsp", "pagc", "zsp"}}};
        const json script{{"type", "array"},
                          {"items",
                           {{"type", "object"},
                            {"additionalProperties", false},
                            {"required", {"matcher", "response"}},
                            {"properties",
                             {{"matcher", {{"type", "string"}}},
                              {"response", {{"type", "string"}}},
                              {"priority", {{"type", "integer"}}},
                              {"regex", {{"type", "boolean"}}}}}}}};
        const json facts{
            {"type", "object"},
            {"additionalProperties", false},
            {"required",
             {"covid_positive", "needs_hospitalization_or_oxygen", "high_risk", "egfr_ml_min",
              "severe_hepatic_impairment", "unmanageable_paxlovid_interactions", "remdesivir_accessible", "weight_kg",
              "age_years"}},
            {"properties",
             {{"covid_positive", {{"type", "boolean"}}},
              {"needs_hospitalization_or_oxygen", {{"type", "boolean"}}},
              {"high_risk", {{"type", "boolean"}}},
              {"egfr_ml_min", {{"type", "number"}, {"minimum", 0}}},
              {"severe_hepatic_impairment", {{"type", "boolean"}}},
              {"unmanageable_paxlovid_interactions", {{"type", "boolean"}}},
              {"remdesivir_accessible", {{"type", "boolean"}}},
              {"weight_kg", {{"type", "number"}, {"exclusiveMinimum", 0}}},
              {"age_years", {{"type", "integer"}, {"minimum", 0}}}}},
        };
        const json trace{
            {"type", "object"},
            {"required", {"method", "seed", "steps", "final_leaf"}},
            {"properties",
             {{"method", method},
              {"seed", {{"type", {"integer", "null"}}}},
              {"steps",
               {{"type", "array"},
                {"items",
                 {{"type", "object"},
                  {"required", {"node_id", "prompt_kind", "prompt", "response", "verdict"}},
                  {"properties",
                   {{"node_id", {{"type", {"string", "null"}}}},
                    {"prompt_kind", {{"enum", {"bdt_question", "bdt_yesno", "cot_fsp", "pagc", "zsp"}}}},
                    {"prompt", {{"type", "string"}}},
                    {"response", {{"type", "string"}}},
                    {"verdict", {{"enum", {"YES", "NO", "AMBIGUOUS", nullptr}}}}}}}}}},
              {"final_leaf", {{"type", {"object", "null"}}}}}},
        };
        const json failure{{"type", {"object", "null"}},
                           {"properties",
                            {{"kind", {{"enum", {"classification_failure", "unresolved_answer", "backend_failure"}}}},
                             {"message", {{"type", "string"}}}}}};
        const json error{{"type", "object"},
                         {"required", {"error"}},
                         {"properties",
                          {{"error",
                            {{"type", "object"},
                             {"properties", {{"code", {{"type", "string"}}}, {"message", {{"type", "string"}}}}}}}}}};
        return json{
            {"RecommendRequest",
             {{"type", "object"},
              {"additionalProperties", false},
              {"required", {"patient_description", "method"}},
              {"properties",
               {{"patient_description", {{"type", "string"}, {"minLength", 1}}},
                {"method", method},
                {"backend", backend},
                {"facts", facts},
                {"script", script}}}}},
            {"RecommendResponse",
             {{"type", "object"},
              {"required", {"recommendation", "leaf_id", "failure", "trace", "latency_ms"}},
              {"properties",
               {{"recommendation", {{"type", {"string", "null"}}}},
                {"leaf_id", {{"type", {"string", "null"}}}},
                {"failure", failure},
                {"trace", trace},
                {"latency_ms", {{"type", "integer"}}}}}}},
            {"EvaluateRequest",
             {{"type", "object"},
              {"additionalProperties", false},
              {"required", {"methods"}},
              {"properties",
               {{"corpus", {{"type", {"string", "array", "null"}}, {"maxItems", kMaxEvaluateCases}}},
                {"methods", {{"type", "array"}, {"minItems", 1}, {"items", method}}},
                {"seeds", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "integer"}}}}},
                {"backend", backend},
                {"script", script}}}}},
            {"CorpusResponse",
             {{"type", "object"},
              {"required", {"cases"}},
              {"properties", {{"cases", {{"type", "array"}}}}}}},
            {"Error", error},
        };
    }();
    return schema.dump(2);
}

}  // namespace cpg
