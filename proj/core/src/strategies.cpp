#include "cpgllm/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

std::string_view to_string(MethodKind method) noexcept {
    switch (method) {
        case MethodKind::Bdt: return "bdt";
        case MethodKind::CotFsp: return "cot_fsp";
        case MethodKind::Pagc: return "pagc";
        case MethodKind::Zsp: return "zsp";
    }
    return "unknown";
}

std::string_view display_name(MethodKind method) noexcept {
    switch (method) {
        case MethodKind::Bdt: return "BDT";
        case MethodKind::CotFsp: return "CoT-FSP";
        case MethodKind::Pagc: return "PAGC";
        case MethodKind::Zsp: return "ZSP";
    }
    return "unknown";
}

std::optional<MethodKind> method_from_string(std::string_view name) {
    std::string lower;
    for (char c : name) lower += (c == '-') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (MethodKind m : all_methods())
        if (lower == to_string(m)) return m;
    return std::nullopt;
}

std::vector<MethodKind> all_methods() { return {MethodKind::Bdt, MethodKind::CotFsp, MethodKind::Pagc, MethodKind::Zsp}; }

std::string_view to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::Yes: return "YES";
        case Verdict::No: return "NO";
        case Verdict::Ambiguous: return "AMBIGUOUS";
    }
    return "AMBIGUOUS";
}

std::vector<std::string> RecommendationTrace::visited_nodes() const {
    std::vector<std::string> out;
    for (const auto& step : steps)
        if (step.prompt_kind == PromptKind::BdtQuestion && step.node_id) out.push_back(*step.node_id);
    return out;
}

json trace_to_json(const RecommendationTrace& trace) {
    json steps = json::array();
    for (const auto& s : trace.steps) {
        json step{
            {"node_id", s.node_id ? json(*s.node_id) : json(nullptr)},
            {"prompt_kind", to_string(s.prompt_kind)},
            {"prompt", s.prompt_text},
            {"response", s.response_text},
            {"verdict", s.verdict ? json(to_string(*s.verdict)) : json(nullptr)},
        };
        steps.push_back(std::move(step));
    }
    json out{
        {"method", to_string(trace.method)},
        {"seed", trace.seed ? json(*trace.seed) : json(nullptr)},
        {"steps", std::move(steps)},
        {"final_leaf", trace.final_leaf ? json{{"id", trace.final_leaf->id}, {"label", trace.final_leaf->label}}
                                        : json(nullptr)},
    };
    return out;
}

RecommendationTrace trace_from_json(const json& j) {
    RecommendationTrace trace;
    auto method = method_from_string(j.at("method").get<std::string>());
    if (!method) throw std::invalid_argument("trace: unknown method");
    trace.method = *method;
    if (!j.at("seed").is_null()) trace.seed = j.at("seed").get<std::int64_t>();
    for (const auto& s : j.at("steps")) {
        TraceStep step;
        if (!s.at("node_id").is_null()) step.node_id = s.at("node_id").get<std::string>();
        const auto kind = s.at("prompt_kind").get<std::string>();
        bool found = false;
        for (PromptKind k : {PromptKind::BdtQuestion, PromptKind::BdtYesNo, PromptKind::CotFsp, PromptKind::Pagc,
                             PromptKind::Zsp}) {
            if (kind == to_string(k)) {
                step.prompt_kind = k;
                found = true;
            }
        }
        if (!found) throw std::invalid_argument("trace: unknown prompt kind '" + kind + "'");
        step.prompt_text = s.at("prompt").get<std::string>();
        step.response_text = s.at("response").get<std::string>();
        if (!s.at("verdict").is_null()) {
            const auto v = s.at("verdict").get<std::string>();
            step.verdict = v == "YES" ? Verdict::Yes : v == "NO" ? Verdict::No : Verdict::Ambiguous;
        }
        trace.steps.push_back(std::move(step));
    }
    if (!j.at("final_leaf").is_null())
        trace.final_leaf = LeafRecommendation{j["final_leaf"].at("id").get<std::string>(),
                                              j["final_leaf"].at("label").get<std::string>()};
    return trace;
}

StrategyError::StrategyError(const std::string& message, RecommendationTrace trace)
    : std::runtime_error(message), trace_(std::move(trace)) {}

UnresolvedAnswer::UnresolvedAnswer(const std::string& message, RecommendationTrace trace, std::string raw_text)
    : StrategyError(message, std::move(trace)), raw_(std::move(raw_text)) {}

// ---- canonicalization -----------------------------------------------------

namespace {

constexpr double kConceptWeight = 3.0;
constexpr double kFigureWeight = 2.0;
constexpr double kWordWeight = 1.0;

struct ConceptAlias {
    std::string_view alias;
    std::string_view canonical;
};

constexpr ConceptAlias kConcepts[] = {
    {"paxlovid", "paxlovid"},        {"nirmatrelvir", "paxlovid"},    {"ritonavir", "paxlovid"},
    {"remdesivir", "remdesivir"},    {"molnupiravir", "molnupiravir"}, {"vaccination", "vaccination"},
    {"vaccine", "vaccination"},      {"booster", "vaccination"},      {"supportive", "supportive care"},
    {"monitoring", "supportive care"}, {"cdc", "guidance"},           {"idsa", "guidance"},
    {"nih", "guidance"},             {"guidance", "guidance"},
};

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words{"a",  "an", "and", "the", "of", "on", "in",  "to",  "for", "from",
                                             "by", "with", "is", "or", "be", "are", "at", "as", "per"};
    return words;
}

std::optional<std::string_view> concept_of(const std::string& token) {
    for (const auto& c : kConcepts)
        if (c.alias == token) return c.canonical;
    return std::nullopt;
}

bool has_digit(const std::string& token) {
    return std::any_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); });
}

// Case-folds and strips punctuation; a '.' survives only between digits.
std::vector<std::string> tokenize(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isalnum(c)) {
            cleaned += static_cast<char>(std::tolower(c));
        } else if (c == '.' && i > 0 && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                   std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
            cleaned += '.';
        } else {
            cleaned += ' ';
        }
    }
    std::vector<std::string> tokens;
    std::string current;
    for (char c : cleaned) {
        if (c == ' ') {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current += c;
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

struct LabelFeatures {
    std::set<std::string> concepts;
    std::set<std::string> figures;
    std::set<std::string> words;
};

LabelFeatures features_of(std::string_view text) {
    LabelFeatures f;
    for (const auto& token : tokenize(text)) {
        if (auto c = concept_of(token)) f.concepts.emplace(*c);
        else if (has_digit(token)) f.figures.insert(token);
        else if (!stopwords().count(token)) f.words.insert(token);
    }
    return f;
}

}  // namespace

std::vector<CanonicalAnswer> score_answer(std::string_view text, std::span<const LeafRecommendation> leaves) {
    std::vector<LabelFeatures> label_features;
    std::map<std::string, int> figure_df;
    std::map<std::string, int> word_df;
    for (const auto& leaf : leaves) {
        label_features.push_back(features_of(leaf.label));
        for (const auto& fig : label_features.back().figures) ++figure_df[fig];
        for (const auto& w : label_features.back().words) ++word_df[w];
    }
    const LabelFeatures answer = features_of(text);

    std::vector<CanonicalAnswer> out;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto& f = label_features[i];
        CanonicalAnswer scored{leaves[i], 0.0, {}};
        double total = 0.0;
        double matched = 0.0;
        for (const auto& c : f.concepts) {
            total += kConceptWeight;
            if (answer.concepts.count(c)) {
                matched += kConceptWeight;
                scored.matched_phrases.push_back(c);
            }
        }
        for (const auto& fig : f.figures) {
            const double w = kFigureWeight / figure_df[fig];
            total += w;
            if (answer.figures.count(fig)) {
                matched += w;
                scored.matched_phrases.push_back(fig);
            }
        }
        if (total == 0.0) {
            for (const auto& word : f.words) {
                const double w = kWordWeight / word_df[word];
                total += w;
                if (answer.words.count(word)) {
                    matched += w;
                    scored.matched_phrases.push_back(word);
                }
            }
        }
        scored.match_score = total > 0.0 ? matched / total : 0.0;
        out.push_back(std::move(scored));
    }
    return out;
}

CanonicalAnswer canonicalize_answer(std::string_view text, std::span<const LeafRecommendation> leaves) {
    if (leaves.empty()) throw std::invalid_argument("canonicalize_answer needs at least one leaf");
    auto scores = score_answer(text, leaves);
    std::stable_sort(scores.begin(), scores.end(),
                     [](const auto& a, const auto& b) { return a.match_score > b.match_score; });
    constexpr double eps = 1e-9;
    const auto& top = scores.front();
    if (top.match_score + eps < kCanonicalAcceptScore)
        throw NoMatchError("no leaf recommendation matches the answer (best score " +
                           std::to_string(top.match_score) + ")");
    if (scores.size() > 1 && top.match_score - scores[1].match_score + eps < kCanonicalMargin)
        throw AmbiguousAnswerError("answer matches both '" + top.leaf.label + "' and '" + scores[1].leaf.label + "'");
    return top;
}

// ---- runners --------------------------------------------------------------

Verdict parse_verdict(std::string_view reply) {
    std::string stripped;
    bool in_tag = false;
    for (char c : reply) {
        if (c == '<') in_tag = true;
        else if (c == '>' && in_tag) in_tag = false;
        else if (!in_tag) stripped += c;
    }
    std::size_t i = 0;
    while (i < stripped.size() && !std::isalpha(static_cast<unsigned char>(stripped[i]))) ++i;
    std::string word;
    while (i < stripped.size() && std::isalpha(static_cast<unsigned char>(stripped[i])))
        word += static_cast<char>(std::toupper(static_cast<unsigned char>(stripped[i++])));
    if (word == "YES") return Verdict::Yes;
    if (word == "NO") return Verdict::No;
    return Verdict::Ambiguous;
}

namespace {

CompletionRequest make_request(std::string prompt, const RunOptions& options, MethodKind method,
                               std::optional<std::string> node_id, PromptKind kind) {
    CompletionRequest req;
    req.prompt = std::move(prompt);
    req.seed = options.seed;
    req.metadata.case_id = options.case_id;
    req.metadata.method = std::string(to_string(method));
    req.metadata.node_id = std::move(node_id);
    req.metadata.prompt_kind = kind;
    return req;
}

CompletionResult call(Backend& backend, const CompletionRequest& request, const RecommendationTrace& trace) {
    try {
        return backend.complete(request);
    } catch (const BackendError& e) {
        throw StrategyBackendFailure(e.what(), trace);
    }
}

RecommendationTrace run_single_call(MethodKind method, PromptBundle prompt, std::span<const LeafRecommendation> leaves,
                                    Backend& backend, const RunOptions& options) {
    RecommendationTrace trace;
    trace.method = method;
    trace.seed = options.seed;
    const auto request = make_request(prompt.text(), options, method, std::nullopt, prompt.kind());
    const auto result = call(backend, request, trace);
    trace.steps.push_back({std::nullopt, prompt.kind(), prompt.text(), result.text, std::nullopt});
    try {
        trace.final_leaf = canonicalize_answer(result.text, leaves).leaf;
    } catch (const CanonicalizationError& e) {
        throw UnresolvedAnswer(e.what(), trace, result.text);
    }
    return trace;
}

}  // namespace

Verdict classify_yes_no(const TemplateSet& templates, const DecisionNode& node, std::string_view response,
                        Backend& backend, const RunOptions& options) {
    const auto prompt = render_bdt_yesno(templates, node, response, options.render);
    const auto request = make_request(prompt.text(), options, MethodKind::Bdt, node.id, PromptKind::BdtYesNo);
    return parse_verdict(backend.complete(request).text);
}

RecommendationTrace run_bdt(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                            Backend& backend, const RunOptions& options) {
    if (patient.empty()) throw PromptError("patient description must not be empty");
    RecommendationTrace trace;
    trace.method = MethodKind::Bdt;
    trace.seed = options.seed;

    std::string current = tree.root();
    while (!tree.is_leaf(current)) {
        const auto& node = tree.node(current);

        const auto question = render_bdt_question(templates, patient, node, options.render);
        const auto q_result = call(backend, make_request(question.text(), options, MethodKind::Bdt, node.id,
                                                         PromptKind::BdtQuestion),
                                   trace);
        trace.steps.push_back({node.id, PromptKind::BdtQuestion, question.text(), q_result.text, std::nullopt});

        // An empty first reply cannot be classified; treat it as ambiguous.
        if (q_result.text.empty()) {
            trace.steps.back().verdict = Verdict::Ambiguous;
            throw ClassificationFailure("empty answer to node '" + node.id + "'", trace);
        }
        const auto yesno = render_bdt_yesno(templates, node, q_result.text, options.render);
        const auto c_result =
            call(backend, make_request(yesno.text(), options, MethodKind::Bdt, node.id, PromptKind::BdtYesNo), trace);
        const Verdict verdict = parse_verdict(c_result.text);
        trace.steps.push_back({node.id, PromptKind::BdtYesNo, yesno.text(), c_result.text, verdict});

        if (verdict == Verdict::Ambiguous)
            throw ClassificationFailure("reply '" + c_result.text + "' to node '" + node.id + "' is neither YES nor NO",
                                        trace);
        current = node.target(verdict == Verdict::Yes ? Branch::Yes : Branch::No);
    }
    trace.final_leaf = tree.leaf(current);
    return trace;
}

RecommendationTrace run_cot_fsp(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                                Backend& backend, const RunOptions& options) {
    const auto leaves = tree.leaf_list();
    return run_single_call(MethodKind::CotFsp, render_cot_prompt(templates, patient, tree, options.render), leaves,
                           backend, options);
}

RecommendationTrace run_pagc(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                             Backend& backend, const RunOptions& options) {
    const auto leaves = tree.leaf_list();
    return run_single_call(MethodKind::Pagc, render_pagc_prompt(templates, patient, tree, options.render), leaves,
                           backend, options);
}

RecommendationTrace run_zsp(std::string_view patient, const TemplateSet& templates,
                            std::span<const LeafRecommendation> leaves, Backend& backend, const RunOptions& options) {
    return run_single_call(MethodKind::Zsp, render_zsp_prompt(templates, patient, options.render), leaves, backend,
                           options);
}

RecommendationTrace run_method(MethodKind method, const GuidelineTree& tree, std::string_view patient,
                               const TemplateSet& templates, Backend& backend, const RunOptions& options) {
    switch (method) {
        case MethodKind::Bdt: return run_bdt(tree, patient, templates, backend, options);
        case MethodKind::CotFsp: return run_cot_fsp(tree, patient, templates, backend, options);
        case MethodKind::Pagc: return run_pagc(tree, patient, templates, backend, options);
        case MethodKind::Zsp: {
            const auto leaves = tree.leaf_list();
            return run_zsp(patient, templates, leaves, backend, options);
        }
    }
    throw std::logic_error("unhandled method");
}

}  // namespace cpg
