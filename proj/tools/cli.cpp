#include "cli.hpp"

#include "cpgllm/dataset.hpp"
#include "cpgllm/evaluation.hpp"
#include "cpgllm/guideline.hpp"
#include "cpgllm/io.hpp"
#include "cpgllm/llm_backend.hpp"
#include "cpgllm/prompt.hpp"
#include "cpgllm/service.hpp"
#include "cpgllm/strategies.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef CPGLLM_DEFAULT_DATA_DIR
#define CPGLLM_DEFAULT_DATA_DIR "data"
#endif

namespace cpg::cli {

using nlohmann::json;

std::string default_data_dir() {
    if (const char* dir = std::getenv("CPGLLM_DATA_DIR"); dir && *dir) return dir;
    return CPGLLM_DEFAULT_DATA_DIR;
}

namespace {

/// Domain failure already reported to the user.
struct DomainFailure {
    int code = kExitDomainError;
};

struct DataPaths {
    std::string guideline;
    std::string bindings;
    std::string templates;
    std::string corpus;

    void defaults() {
        const std::string dir = default_data_dir();
        guideline = dir + "/guideline.json";
        bindings = dir + "/bindings.json";
        templates = dir + "/templates/canonical.json";
        corpus = dir + "/corpus.jsonl";
    }
};

void add_guideline_option(CLI::App& cmd, DataPaths& paths) {
    cmd.add_option("-g,--guideline", paths.guideline, "Guideline tree JSON")->capture_default_str();
}

void add_templates_option(CLI::App& cmd, DataPaths& paths) {
    cmd.add_option("-t,--templates", paths.templates, "Prompt template set JSON")->capture_default_str();
}

MethodKind to_method(const std::string& name) {
    auto m = method_from_string(name);
    if (!m) throw CLI::ValidationError("--method", "unknown method '" + name + "'");
    return *m;
}

std::vector<MethodKind> to_methods(const std::vector<std::string>& names) {
    std::vector<MethodKind> out;
    for (const auto& n : names) out.push_back(to_method(n));
    return out;
}

BackendKind to_backend(const std::string& name) {
    auto k = backend_kind_from_string(name);
    if (!k) throw CLI::ValidationError("--backend", "unknown backend '" + name + "'");
    return *k;
}

std::string patient_text(const std::string& file, const std::string& inline_text) {
    if (!file.empty()) {
        auto text = read_text_file(file);
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    }
    return inline_text;
}

void print_trace(std::ostream& out, const RecommendationTrace& trace) {
    out << "trace:\n";
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& s = trace.steps[i];
        out << "  " << (i + 1) << ". [" << to_string(s.prompt_kind) << ']';
        if (s.node_id) out << ' ' << *s.node_id;
        out << ": " << s.response_text;
        if (s.verdict) out << " => " << to_string(*s.verdict);
        out << '\n';
    }
}

// ---- subcommands ------------------------------------------------------------

int run_validate(const DataPaths& paths, const std::string& bindings, std::ostream& out) {
    const auto tree = load_guideline(paths.guideline);
    if (!bindings.empty()) {
        const auto b = load_bindings(bindings);
        for (const auto& [id, node] : tree.nodes())
            if (!b.find(id)) throw UnboundPredicateError(id);
    }
    out << "leaves: " << tree.leaves().size() << ", paths: " << enumerate_paths(tree).size() << '\n';
    return kExitOk;
}

int run_paths(const DataPaths& paths, std::ostream& out) {
    const auto tree = load_guideline(paths.guideline);
    const auto all = enumerate_paths(tree);
    for (std::size_t i = 0; i < all.size(); ++i) out << (i + 1) << ". " << to_string(all[i]) << '\n';
    return kExitOk;
}

struct RenderArgs {
    std::string method = "bdt";
    std::string patient_file;
    std::string patient;
    std::string node;
    std::string response;
    std::size_t max_chars = kDefaultPromptBudget;
};

int run_render(const DataPaths& paths, const RenderArgs& a, std::ostream& out) {
    const MethodKind method = to_method(a.method);
    const auto templates = load_templates(paths.templates, true);
    const std::string patient = patient_text(a.patient_file, a.patient);
    RenderOptions options{a.max_chars};
    if (method == MethodKind::Zsp) {
        out << render_zsp_prompt(templates, patient, options).text() << '\n';
        return kExitOk;
    }
    const auto tree = load_guideline(paths.guideline);
    switch (method) {
        case MethodKind::Bdt: {
            const std::string id = a.node.empty() ? tree.root() : a.node;
            if (!tree.is_node(id)) throw std::invalid_argument("no decision node '" + id + "'");
            if (a.response.empty())
                out << render_bdt_question(templates, patient, tree.node(id), options).text() << '\n';
            else
                out << render_bdt_yesno(templates, tree.node(id), a.response, options).text() << '\n';
            break;
        }
        case MethodKind::CotFsp: out << render_cot_prompt(templates, patient, tree, options).text() << '\n'; break;
        case MethodKind::Pagc: out << render_pagc_prompt(templates, patient, tree, options).text() << '\n'; break;
        case MethodKind::Zsp: break;
    }
    return kExitOk;
}

struct BackendArgs {
    std::string backend = "truthful_sim";
    std::string model_id;
    std::string base_url;
    double temperature = 0.0;
    std::optional<std::int64_t> seed;
    std::string script_file;
    std::string transcript;
    int max_retries = 3;
    int timeout_ms = 60'000;

    BackendConfig config() const {
        BackendConfig c;
        c.kind = to_backend(backend);
        c = apply_environment(c);
        if (!model_id.empty()) c.model_id = model_id;
        if (!base_url.empty()) c.base_url = base_url;
        c.temperature = temperature;
        c.seed = seed;
        c.max_retries = max_retries;
        c.timeout = std::chrono::milliseconds(timeout_ms);
        return c;
    }
};

void add_backend_options(CLI::App& cmd, BackendArgs& b) {
    cmd.add_option("--backend", b.backend, "http_chat, scripted or truthful_sim")->capture_default_str();
    cmd.add_option("--model-id", b.model_id, "Model id (HTTP_CHAT; overrides LLM_MODEL_ID)");
    cmd.add_option("--base-url", b.base_url, "Chat endpoint base URL (overrides LLM_BASE_URL)");
    cmd.add_option("--temperature", b.temperature, "Sampling temperature")->capture_default_str();
    cmd.add_option("--script", b.script_file, "Rule file for the scripted backend");
    cmd.add_option("--transcript", b.transcript, "Append every completion to this JSON-lines file");
    cmd.add_option("--max-retries", b.max_retries, "HTTP retries")->capture_default_str();
    cmd.add_option("--timeout-ms", b.timeout_ms, "HTTP timeout per call")->capture_default_str();
}

struct RecommendArgs {
    std::string method = "bdt";
    std::string patient_file;
    std::string patient;
    std::string facts_file;
    std::string case_id;
    bool as_json = false;
};

int run_recommend(const DataPaths& paths, const RecommendArgs& a, BackendArgs b, std::ostream& out,
                  std::ostream& err) {
    const MethodKind method = to_method(a.method);
    const auto tree = load_guideline(paths.guideline);
    const auto bindings = load_bindings(paths.bindings);
    const auto templates = load_templates(paths.templates, true);

    std::string patient = patient_text(a.patient_file, a.patient);
    BackendContext context;
    context.bindings = &bindings;
    if (!a.case_id.empty()) {
        const auto corpus = load_corpus(paths.corpus, leaf_labels(tree));
        const auto* c = find_case(corpus, a.case_id);
        if (!c) throw std::invalid_argument("no case '" + a.case_id + "' in " + paths.corpus);
        if (patient.empty()) patient = c->description;
        context.facts = c->facts;
    }
    if (!a.facts_file.empty()) context.facts = facts_from_json(json::parse(read_text_file(a.facts_file)));
    if (patient.empty()) throw std::invalid_argument("give --patient-file, --patient or --case");
    if (!b.script_file.empty()) context.script = load_script(b.script_file);
    if (!b.transcript.empty()) context.transcript = std::make_shared<TranscriptLog>(b.transcript);

    const auto config = b.config();
    auto backend = make_backend(config, context);
    RunOptions options{config.seed, a.case_id.empty() ? "cli" : a.case_id, {}};
    try {
        const auto trace = run_method(method, tree, patient, templates, *backend, options);
        if (a.as_json) {
            out << json{{"recommendation", trace.final_leaf->label},
                        {"leaf_id", trace.final_leaf->id},
                        {"failure", nullptr},
                        {"trace", trace_to_json(trace)}}
                       .dump(2)
                << '\n';
        } else {
            out << "recommendation: " << trace.final_leaf->label << '\n';
            out << "leaf: " << trace.final_leaf->id << '\n';
            print_trace(out, trace);
        }
        return kExitOk;
    } catch (const StrategyError& e) {
        if (a.as_json) {
            out << json{{"recommendation", nullptr},
                        {"leaf_id", nullptr},
                        {"failure", {{"kind", e.kind()}, {"message", e.what()}}},
                        {"trace", trace_to_json(e.trace())}}
                       .dump(2)
                << '\n';
        } else {
            out << "failure (" << e.kind() << "): " << e.what() << '\n';
            print_trace(out, e.trace());
        }
        err << "error: no recommendation: " << e.what() << '\n';
        throw DomainFailure{};
    }
}

struct BenchArgs {
    std::string seeds;
    std::string methods = "bdt";
    std::string out_dir = "./out";
    int parallel = 4;
    bool canonical = false;
};

std::vector<std::int64_t> parse_seeds(const std::string& text) {
    std::vector<std::int64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--seeds", "'" + item + "' is not an integer");
        }
    }
    return seeds;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run_bench(const DataPaths& paths, const BenchArgs& a, BackendArgs b, std::ostream& out) {
    RunConfig config;
    if (!a.seeds.empty()) config.seeds = parse_seeds(a.seeds);
    config.methods = to_methods(split_list(a.methods));
    config.parallelism = a.parallel;
    config.backend = b.config();
    set_http_parallelism(a.parallel);

    const auto tree = load_guideline(paths.guideline);
    const auto bindings = load_bindings(paths.bindings);
    const auto templates = load_templates(paths.templates, true);
    const auto corpus = load_corpus(paths.corpus, leaf_labels(tree), a.canonical);

    BenchmarkContext context;
    context.bindings = &bindings;
    if (!b.script_file.empty()) context.script = load_script(b.script_file);
    if (!b.transcript.empty()) context.transcript = std::make_shared<TranscriptLog>(b.transcript);

    const auto outcome = evaluate(corpus, config, tree, templates, context);
    write_benchmark_outputs(a.out_dir, outcome, config);

    out << render_fscore_table(outcome.reports);
    for (const auto& r : outcome.reports)
        out << display_name(r.method) << ": mean macro-F1 " << format_2dp(r.mean_macro_f1) << ", failures "
            << r.failures << '/' << r.records << '\n';
    out << "wrote " << a.out_dir << "/report.json, report.md, predictions.jsonl\n";
    return kExitOk;
}

int run_agreement(const std::string& ratings_file, const std::string& groups_file, std::ostream& out) {
    const auto records = parse_annotations_csv(read_text_file(ratings_file));
    const auto report = agreement_report(records);
    out << "raters: " << report.raters[0] << ", " << report.raters[1] << "; items: " << report.item_count << '\n';
    for (const auto& c : report.categories)
        out << to_string(c.category) << ": AC1 " << format_2dp(c.ac1) << " (" << to_string(c.band) << ")\n";
    std::map<std::string, std::string> groups;
    if (!groups_file.empty()) groups = parse_groups_csv(read_text_file(groups_file));
    out << '\n' << render_human_eval_table(aggregate_human_eval(records, groups));
    return kExitOk;
}

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    std::string cors_origin = "*";
    int parallel = 4;
};

int run_serve(const DataPaths& paths, const ServeArgs& a, std::ostream& out) {
    Service service;
    ServiceConfig config;
    config.guideline_path = paths.guideline;
    config.bindings_path = paths.bindings;
    config.templates_path = paths.templates;
    config.corpus_path = paths.corpus;
    config.static_dir = a.static_dir;
    config.cors_origin = a.cors_origin;
    config.evaluate_parallelism = a.parallel;
    set_http_parallelism(a.parallel);
    service.initialize(config);
    out << "serving on http://" << a.host << ':' << a.port << std::endl;
    serve(service, a.host, a.port);
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Guideline-driven treatment recommendation with language models", "cpgllm"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    DataPaths paths;
    paths.defaults();

    auto* validate = app.add_subcommand("validate", "Check a guideline tree and print its leaf and path counts");
    add_guideline_option(*validate, paths);
    std::string validate_bindings;
    validate->add_option("-b,--bindings", validate_bindings, "Also check that every node has a bound predicate");

    auto* paths_cmd = app.add_subcommand("paths", "List every root-to-leaf path");
    add_guideline_option(*paths_cmd, paths);

    RenderArgs render_args;
    auto* render = app.add_subcommand("render", "Print the prompt a method would send");
    add_guideline_option(*render, paths);
    add_templates_option(*render, paths);
    render->add_option("-m,--method", render_args.method, "bdt, cot_fsp, pagc or zsp")->capture_default_str();
    render->add_option("-p,--patient-file", render_args.patient_file, "File holding the patient description");
    render->add_option("--patient", render_args.patient, "Patient description text");
    render->add_option("--node", render_args.node, "BDT node to render (default: root)");
    render->add_option("--response", render_args.response, "Render the BDT YES/NO prompt for this response");
    render->add_option("--max-chars", render_args.max_chars, "Prompt budget")->capture_default_str();

    RecommendArgs recommend_args;
    BackendArgs recommend_backend;
    auto* recommend = app.add_subcommand("recommend", "Recommend a treatment for one patient");
    add_guideline_option(*recommend, paths);
    add_templates_option(*recommend, paths);
    recommend->add_option("--bindings", paths.bindings, "Predicate bindings JSON")->capture_default_str();
    recommend->add_option("--corpus", paths.corpus, "Corpus used by --case")->capture_default_str();
    recommend->add_option("-m,--method", recommend_args.method, "bdt, cot_fsp, pagc or zsp")->capture_default_str();
    recommend->add_option("-p,--patient-file", recommend_args.patient_file, "File holding the patient description");
    recommend->add_option("--patient", recommend_args.patient, "Patient description text");
    recommend->add_option("--facts", recommend_args.facts_file, "Structured facts JSON for truthful_sim");
    recommend->add_option("--case", recommend_args.case_id, "Take description and facts from a corpus case");
    recommend->add_option("--seed", recommend_backend.seed, "Seed passed to the backend");
    recommend->add_flag("--json", recommend_args.as_json, "Print the result as JSON");
    add_backend_options(*recommend, recommend_backend);

    BenchArgs bench_args;
    BackendArgs bench_backend;
    auto* bench = app.add_subcommand("bench", "Run the multi-seed benchmark and write reports");
    add_guideline_option(*bench, paths);
    add_templates_option(*bench, paths);
    bench->add_option("--bindings", paths.bindings, "Predicate bindings JSON")->capture_default_str();
    bench->add_option("--corpus", paths.corpus, "Corpus JSON lines")->capture_default_str();
    bench->add_option("--seeds", bench_args.seeds, "Comma-separated seeds (default 9631,4603,6367,4057)");
    bench->add_option("--methods", bench_args.methods, "Comma-separated methods")->capture_default_str();
    bench->add_option("--out", bench_args.out_dir, "Output directory")->capture_default_str();
    bench->add_option("--parallel", bench_args.parallel, "Concurrent runs")->capture_default_str()->check(
        CLI::Range(1, 64));
    bench->add_flag("--canonical", bench_args.canonical, "Enforce the 39-case, 13-per-difficulty shape");
    add_backend_options(*bench, bench_backend);

    std::string ratings_file;
    std::string groups_file;
    auto* agreement = app.add_subcommand("agreement", "Inter-rater agreement and human evaluation scores");
    agreement->add_option("--ratings", ratings_file, "CSV: response_id,rater_id,category,rating")->required();
    agreement->add_option("--groups", groups_file, "CSV: response_id,group");

    ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP service");
    add_guideline_option(*serve_cmd, paths);
    add_templates_option(*serve_cmd, paths);
    serve_cmd->add_option("--bindings", paths.bindings, "Predicate bindings JSON")->capture_default_str();
    serve_cmd->add_option("--corpus", paths.corpus, "Corpus JSON lines")->capture_default_str();
    serve_cmd->add_option("--host", serve_args.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", serve_args.port, "Port")->capture_default_str()->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--static", serve_args.static_dir, "Directory served at /");
    serve_cmd->add_option("--cors-origin", serve_args.cors_origin, "Access-Control-Allow-Origin value")
        ->capture_default_str();
    serve_cmd->add_option("--parallel", serve_args.parallel, "Concurrent backend calls")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        if (validate->parsed()) return run_validate(paths, validate_bindings, out);
        if (paths_cmd->parsed()) return run_paths(paths, out);
        if (render->parsed()) return run_render(paths, render_args, out);
        if (recommend->parsed()) return run_recommend(paths, recommend_args, recommend_backend, out, err);
        if (bench->parsed()) return run_bench(paths, bench_args, bench_backend, out);
        if (agreement->parsed()) return run_agreement(ratings_file, groups_file, out);
        if (serve_cmd->parsed()) return run_serve(paths, serve_args, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DomainFailure& f) {
        return f.code;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitDomainError;
    }
    return kExitUsage;
}

}  // namespace cpg::cli
