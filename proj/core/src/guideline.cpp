#include "cpgllm/guideline.hpp"

#include "cpgllm/io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

GuidelineSyntaxError::GuidelineSyntaxError(std::string message, std::size_t line, std::size_t column)
    : GuidelineError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                     message),
      line_(line),
      column_(column) {}

GuidelineSemanticError::GuidelineSemanticError(const std::string& message, std::string offending_id)
    : GuidelineError(message), id_(std::move(offending_id)) {}

UnboundPredicateError::UnboundPredicateError(const std::string& node_id)
    : std::runtime_error("no predicate bound to node '" + node_id + "'"), node_id_(node_id) {}

std::string_view to_string(Branch b) noexcept { return b == Branch::Yes ? "YES" : "NO"; }

std::string to_string(const PathDescriptor& path) {
    std::string out;
    for (const auto& step : path.steps) {
        out += step.node_id;
        out += " -[";
        out += to_string(step.branch);
        out += "]-> ";
    }
    out += path.leaf_id;
    return out;
}

bool GuidelineTree::is_leaf(std::string_view id) const { return leaves_.find(std::string(id)) != leaves_.end(); }

bool GuidelineTree::is_node(std::string_view id) const { return nodes_.find(std::string(id)) != nodes_.end(); }

const DecisionNode& GuidelineTree::node(std::string_view id) const {
    auto it = nodes_.find(std::string(id));
    if (it == nodes_.end()) throw std::out_of_range("unknown node '" + std::string(id) + "'");
    return it->second;
}

const LeafRecommendation& GuidelineTree::leaf(std::string_view id) const {
    auto it = leaves_.find(std::string(id));
    if (it == leaves_.end()) throw std::out_of_range("unknown leaf '" + std::string(id) + "'");
    return it->second;
}

const LeafRecommendation* GuidelineTree::find_leaf_by_label(std::string_view label) const {
    for (const auto& [id, leaf] : leaves_)
        if (leaf.label == label) return &leaf;
    return nullptr;
}

std::vector<LeafRecommendation> GuidelineTree::leaf_list() const {
    std::vector<LeafRecommendation> out;
    out.reserve(leaves_.size());
    for (const auto& [id, leaf] : leaves_) out.push_back(leaf);
    return out;
}

std::size_t GuidelineTree::depth() const {
    std::unordered_map<std::string, std::size_t> memo;
    std::function<std::size_t(const std::string&)> longest = [&](const std::string& id) -> std::size_t {
        if (is_leaf(id)) return 0;
        if (auto it = memo.find(id); it != memo.end()) return it->second;
        const auto& n = node(id);
        const std::size_t d = 1 + std::max(longest(n.yes_target), longest(n.no_target));
        memo.emplace(id, d);
        return d;
    };
    return longest(root_);
}

std::map<std::string, std::size_t> GuidelineTree::parent_counts() const {
    std::map<std::string, std::set<std::string>> parents;
    for (const auto& [id, n] : nodes_) {
        parents[n.yes_target].insert(id);
        parents[n.no_target].insert(id);
    }
    std::map<std::string, std::size_t> out;
    for (const auto& [id, n] : nodes_) out[id] = parents[id].size();
    for (const auto& [id, l] : leaves_) out[id] = parents[id].size();
    return out;
}

namespace {

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
    // nlohmann reports the 1-based index of the offending byte.
    const std::size_t end = std::min(byte > 0 ? byte - 1 : 0, text.size());
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < end; ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

const std::string& require_string(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw GuidelineSchemaError(where + ": missing \"" + key + "\"");
    if (!it->is_string()) throw GuidelineSchemaError(where + ": \"" + key + "\" must be a string");
    return it->get_ref<const std::string&>();
}

const json& require_object(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw GuidelineSchemaError(std::string("missing \"") + key + "\"");
    if (!it->is_object()) throw GuidelineSchemaError(std::string("\"") + key + "\" must be an object");
    return *it;
}

}  // namespace

GuidelineTree parse_guideline(std::string_view content) {
    json doc;
    try {
        doc = json::parse(content);
    } catch (const json::parse_error& e) {
        const auto [line, column] = line_and_column(content, e.byte);
        throw GuidelineSyntaxError(e.what(), line, column);
    }
    if (!doc.is_object()) throw GuidelineSchemaError("guideline file must contain a JSON object");
    for (const auto& [key, value] : doc.items()) {
        if (key != "version" && key != "root" && key != "nodes" && key != "leaves")
            throw GuidelineSchemaError("unknown top-level key \"" + key + "\"");
    }

    GuidelineTree tree;
    tree.version_ = require_string(doc, "version", "guideline");
    tree.root_ = require_string(doc, "root", "guideline");
    const json& nodes = require_object(doc, "nodes");
    const json& leaves = require_object(doc, "leaves");

    std::map<std::string, std::string> label_owner;
    for (const auto& [id, value] : leaves.items()) {
        if (id.empty()) throw GuidelineSemanticError("leaf with empty id", id);
        if (!value.is_object()) throw GuidelineSchemaError("leaf '" + id + "' must be an object");
        if (value.size() != 1 || !value.contains("label"))
            throw GuidelineSchemaError("leaf '" + id + "' must have exactly the field \"label\"");
        const std::string& label = require_string(value, "label", "leaf '" + id + "'");
        if (label.empty()) throw GuidelineSemanticError("leaf '" + id + "' has an empty label", id);
        if (auto [it, inserted] = label_owner.emplace(label, id); !inserted)
            throw GuidelineSemanticError("leaf '" + id + "' duplicates the label of leaf '" + it->second + "'", id);
        tree.leaves_.emplace(id, LeafRecommendation{id, label});
    }

    for (const auto& [id, value] : nodes.items()) {
        if (id.empty()) throw GuidelineSemanticError("node with empty id", id);
        if (tree.leaves_.count(id)) throw GuidelineSemanticError("id '" + id + "' is both a node and a leaf", id);
        if (!value.is_object()) throw GuidelineSchemaError("node '" + id + "' must be an object");
        const bool binary = value.contains("yes") && value.contains("no") && value.contains("question") &&
                            value.size() == 3;
        if (!binary)
            throw GuidelineSemanticError(
                "node '" + id + "' is not binary: it must have exactly \"question\", \"yes\" and \"no\"", id);
        DecisionNode n;
        n.id = id;
        n.question = require_string(value, "question", "node '" + id + "'");
        n.yes_target = require_string(value, "yes", "node '" + id + "'");
        n.no_target = require_string(value, "no", "node '" + id + "'");
        if (n.question.empty()) throw GuidelineSemanticError("node '" + id + "' has an empty question", id);
        if (n.yes_target == id || n.no_target == id)
            throw GuidelineSemanticError("node '" + id + "' points at itself (cycle)", id);
        tree.nodes_.emplace(id, std::move(n));
    }

    auto exists = [&](const std::string& id) { return tree.nodes_.count(id) || tree.leaves_.count(id); };
    if (!exists(tree.root_)) throw GuidelineSemanticError("root '" + tree.root_ + "' does not exist", tree.root_);
    for (const auto& [id, n] : tree.nodes_) {
        for (const auto* target : {&n.yes_target, &n.no_target}) {
            if (!exists(*target))
                throw GuidelineSemanticError("node '" + id + "' references missing id '" + *target + "'", *target);
        }
    }

    // Cycle detection over every node, not only the reachable ones.
    enum class Mark { White, Grey, Black };
    std::map<std::string, Mark> mark;
    for (const auto& [id, n] : tree.nodes_) mark[id] = Mark::White;
    std::function<void(const std::string&)> visit = [&](const std::string& id) {
        mark[id] = Mark::Grey;
        const auto& n = tree.nodes_.at(id);
        for (const auto* target : {&n.yes_target, &n.no_target}) {
            if (!tree.nodes_.count(*target)) continue;
            if (mark[*target] == Mark::Grey)
                throw GuidelineSemanticError("cycle through node '" + *target + "'", *target);
            if (mark[*target] == Mark::White) visit(*target);
        }
        mark[id] = Mark::Black;
    };
    for (const auto& [id, n] : tree.nodes_)
        if (mark[id] == Mark::White) visit(id);

    std::set<std::string> reached;
    std::vector<std::string> stack{tree.root_};
    while (!stack.empty()) {
        std::string id = std::move(stack.back());
        stack.pop_back();
        if (!reached.insert(id).second) continue;
        if (auto it = tree.nodes_.find(id); it != tree.nodes_.end()) {
            stack.push_back(it->second.yes_target);
            stack.push_back(it->second.no_target);
        }
    }
    for (const auto& [id, n] : tree.nodes_)
        if (!reached.count(id)) throw GuidelineSemanticError("node '" + id + "' is unreachable from the root", id);
    for (const auto& [id, l] : tree.leaves_)
        if (!reached.count(id)) throw GuidelineSemanticError("leaf '" + id + "' is unreachable from the root", id);

    return tree;
}

GuidelineTree load_guideline(const std::string& path) { return parse_guideline(read_text_file(path)); }

std::string serialize_guideline(const GuidelineTree& tree) {
    json doc;
    doc["version"] = tree.version();
    doc["root"] = tree.root();
    doc["nodes"] = json::object();
    doc["leaves"] = json::object();
    for (const auto& [id, n] : tree.nodes())
        doc["nodes"][id] = {{"question", n.question}, {"yes", n.yes_target}, {"no", n.no_target}};
    for (const auto& [id, l] : tree.leaves()) doc["leaves"][id] = {{"label", l.label}};
    return doc.dump(2) + "\n";
}

bool structurally_equal(const GuidelineTree& a, const GuidelineTree& b) {
    if (a.version() != b.version() || a.root() != b.root()) return false;
    if (a.leaves() != b.leaves()) return false;
    if (a.nodes().size() != b.nodes().size()) return false;
    for (const auto& [id, n] : a.nodes()) {
        auto it = b.nodes().find(id);
        if (it == b.nodes().end()) return false;
        const auto& m = it->second;
        if (n.question != m.question || n.yes_target != m.yes_target || n.no_target != m.no_target) return false;
    }
    return true;
}

std::vector<PathDescriptor> enumerate_paths(const GuidelineTree& tree) {
    std::vector<PathDescriptor> out;
    PathDescriptor current;
    std::function<void(const std::string&)> walk = [&](const std::string& id) {
        if (tree.is_leaf(id)) {
            current.leaf_id = id;
            out.push_back(current);
            return;
        }
        const auto& n = tree.node(id);
        for (Branch b : {Branch::Yes, Branch::No}) {
            current.steps.push_back({id, b});
            walk(n.target(b));
            current.steps.pop_back();
        }
    };
    walk(tree.root());
    return out;
}

void validate_facts(const StructuredPatientFacts& f) {
    if (!std::isfinite(f.egfr_ml_min) || f.egfr_ml_min < 0.0)
        throw std::invalid_argument("egfr_ml_min must be finite and >= 0");
    if (!std::isfinite(f.weight_kg) || f.weight_kg <= 0.0)
        throw std::invalid_argument("weight_kg must be finite and > 0");
    if (f.age_years < 0) throw std::invalid_argument("age_years must be >= 0");
}

namespace {

constexpr const char* kFactKeys[] = {
    "covid_positive",     "needs_hospitalization_or_oxygen",    "high_risk",
    "egfr_ml_min",        "severe_hepatic_impairment",          "unmanageable_paxlovid_interactions",
    "remdesivir_accessible", "weight_kg",                        "age_years",
};

bool fact_bool(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw std::invalid_argument(std::string("facts: missing \"") + key + "\"");
    if (!it->is_boolean()) throw std::invalid_argument(std::string("facts: \"") + key + "\" must be a boolean");
    return it->get<bool>();
}

double fact_number(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw std::invalid_argument(std::string("facts: missing \"") + key + "\"");
    if (!it->is_number()) throw std::invalid_argument(std::string("facts: \"") + key + "\" must be a number");
    return it->get<double>();
}

}  // namespace

StructuredPatientFacts facts_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("facts must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(std::begin(kFactKeys), std::end(kFactKeys), [&](const char* k) { return key == k; }) ==
            std::end(kFactKeys))
            throw std::invalid_argument("facts: unknown field \"" + key + "\"");
    }
    StructuredPatientFacts f;
    f.covid_positive = fact_bool(j, "covid_positive");
    f.needs_hospitalization_or_oxygen = fact_bool(j, "needs_hospitalization_or_oxygen");
    f.high_risk = fact_bool(j, "high_risk");
    f.egfr_ml_min = fact_number(j, "egfr_ml_min");
    f.severe_hepatic_impairment = fact_bool(j, "severe_hepatic_impairment");
    f.unmanageable_paxlovid_interactions = fact_bool(j, "unmanageable_paxlovid_interactions");
    f.remdesivir_accessible = fact_bool(j, "remdesivir_accessible");
    f.weight_kg = fact_number(j, "weight_kg");
    const auto& age = j.contains("age_years") ? j.at("age_years") : json();
    if (!age.is_number_integer()) throw std::invalid_argument("facts: \"age_years\" must be an integer");
    f.age_years = age.get<int>();
    validate_facts(f);
    return f;
}

json facts_to_json(const StructuredPatientFacts& f) {
    return {
        {"covid_positive", f.covid_positive},
        {"needs_hospitalization_or_oxygen", f.needs_hospitalization_or_oxygen},
        {"high_risk", f.high_risk},
        {"egfr_ml_min", f.egfr_ml_min},
        {"severe_hepatic_impairment", f.severe_hepatic_impairment},
        {"unmanageable_paxlovid_interactions", f.unmanageable_paxlovid_interactions},
        {"remdesivir_accessible", f.remdesivir_accessible},
        {"weight_kg", f.weight_kg},
        {"age_years", f.age_years},
    };
}

namespace {

struct PredicateName {
    Predicate predicate;
    std::string_view name;
};

constexpr PredicateName kPredicateNames[] = {
    {Predicate::CovidPositive, "covid_positive"},
    {Predicate::NeedsHospitalizationOrOxygen, "needs_hospitalization_or_oxygen"},
    {Predicate::HighRisk, "high_risk"},
    {Predicate::SevereRenalOrHepaticImpairment, "severe_renal_or_hepatic_impairment"},
    {Predicate::UnmanageablePaxlovidInteractions, "unmanageable_paxlovid_interactions"},
    {Predicate::EgfrAtLeast60, "egfr_at_least_60"},
    {Predicate::RemdesivirAccessible, "remdesivir_accessible"},
    {Predicate::WeightAtLeast40kg, "weight_at_least_40kg"},
    {Predicate::AgeAtLeast18, "age_at_least_18"},
};

}  // namespace

std::string_view to_string(Predicate p) noexcept {
    for (const auto& entry : kPredicateNames)
        if (entry.predicate == p) return entry.name;
    return "unknown";
}

std::optional<Predicate> predicate_from_string(std::string_view name) {
    for (const auto& entry : kPredicateNames)
        if (entry.name == name) return entry.predicate;
    return std::nullopt;
}

std::vector<Predicate> all_predicates() {
    std::vector<Predicate> out;
    for (const auto& entry : kPredicateNames) out.push_back(entry.predicate);
    return out;
}

bool apply_predicate(Predicate p, const StructuredPatientFacts& f) {
    switch (p) {
        case Predicate::CovidPositive: return f.covid_positive;
        case Predicate::NeedsHospitalizationOrOxygen: return f.needs_hospitalization_or_oxygen;
        case Predicate::HighRisk: return f.high_risk;
        case Predicate::SevereRenalOrHepaticImpairment:
            return f.egfr_ml_min < kSevereRenalEgfr || f.severe_hepatic_impairment;
        case Predicate::UnmanageablePaxlovidInteractions: return f.unmanageable_paxlovid_interactions;
        case Predicate::EgfrAtLeast60: return f.egfr_ml_min >= kFullDosePaxlovidEgfr;
        case Predicate::RemdesivirAccessible: return f.remdesivir_accessible;
        case Predicate::WeightAtLeast40kg: return f.weight_kg >= kStandardRemdesivirWeightKg;
        case Predicate::AgeAtLeast18: return f.age_years >= kAdultAgeYears;
    }
    throw std::logic_error("unhandled predicate");
}

PredicateBindings::PredicateBindings(std::map<std::string, Predicate> bindings) : bindings_(std::move(bindings)) {}

std::optional<Predicate> PredicateBindings::find(std::string_view node_id) const {
    auto it = bindings_.find(std::string(node_id));
    if (it == bindings_.end()) return std::nullopt;
    return it->second;
}

PredicateBindings parse_bindings(std::string_view content) {
    json doc;
    try {
        doc = json::parse(content);
    } catch (const json::parse_error& e) {
        const auto [line, column] = line_and_column(content, e.byte);
        throw GuidelineSyntaxError(e.what(), line, column);
    }
    if (!doc.is_object()) throw GuidelineSchemaError("binding file must contain a JSON object");
    std::map<std::string, Predicate> out;
    for (const auto& [id, value] : doc.items()) {
        if (!value.is_string()) throw GuidelineSchemaError("binding for '" + id + "' must be a string");
        auto p = predicate_from_string(value.get<std::string>());
        if (!p) throw GuidelineSemanticError("unknown predicate '" + value.get<std::string>() + "' for node '" + id + "'", id);
        out.emplace(id, *p);
    }
    return PredicateBindings(std::move(out));
}

PredicateBindings load_bindings(const std::string& path) { return parse_bindings(read_text_file(path)); }

Evaluation evaluate_facts(const GuidelineTree& tree, const PredicateBindings& bindings,
                          const StructuredPatientFacts& facts) {
    validate_facts(facts);
    Evaluation result;
    std::string current = tree.root();
    while (!tree.is_leaf(current)) {
        const auto& n = tree.node(current);
        auto predicate = bindings.find(n.id);
        if (!predicate) throw UnboundPredicateError(n.id);
        const Branch b = apply_predicate(*predicate, facts) ? Branch::Yes : Branch::No;
        result.path.steps.push_back({n.id, b});
        current = n.target(b);
    }
    result.path.leaf_id = current;
    result.leaf = tree.leaf(current);
    return result;
}

}  // namespace cpg
