#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cpg {

// Errors raised while loading a guideline file.
class GuidelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed JSON. Line and column are 1-based.
class GuidelineSyntaxError : public GuidelineError {
public:
    GuidelineSyntaxError(std::string message, std::size_t line, std::size_t column);
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

// Well-formed JSON with the wrong shape (missing keys, wrong types).
class GuidelineSchemaError : public GuidelineError {
public:
    using GuidelineError::GuidelineError;
};

// Structural violation: dangling id, cycle, non-binary node, duplicate leaf
// label, unreachable node. offending_id() names the culprit.
class GuidelineSemanticError : public GuidelineError {
public:
    GuidelineSemanticError(const std::string& message, std::string offending_id);
    const std::string& offending_id() const noexcept { return id_; }

private:
    std::string id_;
};

enum class Branch { Yes, No };

std::string_view to_string(Branch b) noexcept;

struct DecisionNode {
    std::string id;
    std::string question;
    std::string yes_target;
    std::string no_target;

    const std::string& target(Branch b) const { return b == Branch::Yes ? yes_target : no_target; }
};

struct LeafRecommendation {
    std::string id;
    std::string label;

    friend bool operator==(const LeafRecommendation&, const LeafRecommendation&) = default;
};

struct PathStep {
    std::string node_id;
    Branch branch;

    friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct PathDescriptor {
    std::vector<PathStep> steps;
    std::string leaf_id;

    friend bool operator==(const PathDescriptor&, const PathDescriptor&) = default;
};

std::string to_string(const PathDescriptor& path);

/// Immutable binary decision tree over yes/no clinical questions.
///
/// Subtrees may be shared (a node can have several parents); the graph is
/// acyclic, binary, and every node and leaf is reachable from the root. Only
/// `parse_guideline` constructs instances, so a tree in hand is always valid.
class GuidelineTree {
public:
    const std::string& version() const noexcept { return version_; }
    const std::string& root() const noexcept { return root_; }
    const std::map<std::string, DecisionNode>& nodes() const noexcept { return nodes_; }
    const std::map<std::string, LeafRecommendation>& leaves() const noexcept { return leaves_; }

    bool is_leaf(std::string_view id) const;
    bool is_node(std::string_view id) const;
    const DecisionNode& node(std::string_view id) const;
    const LeafRecommendation& leaf(std::string_view id) const;
    const LeafRecommendation* find_leaf_by_label(std::string_view label) const;

    /// Leaves in declaration-independent (id) order.
    std::vector<LeafRecommendation> leaf_list() const;

    /// Longest root-to-leaf path measured in internal nodes.
    std::size_t depth() const;

    /// Number of distinct parents per node/leaf id (root has 0).
    std::map<std::string, std::size_t> parent_counts() const;

private:
    friend GuidelineTree parse_guideline(std::string_view content);

    std::string version_;
    std::string root_;
    std::map<std::string, DecisionNode> nodes_;
    std::map<std::string, LeafRecommendation> leaves_;
};

GuidelineTree parse_guideline(std::string_view content);
GuidelineTree load_guideline(const std::string& path);

/// Canonical JSON text (2-space indent, keys sorted); parse(serialize(t)) == t.
std::string serialize_guideline(const GuidelineTree& tree);

bool structurally_equal(const GuidelineTree& a, const GuidelineTree& b);

/// Every root-to-leaf path exactly once, YES branch explored before NO.
std::vector<PathDescriptor> enumerate_paths(const GuidelineTree& tree);

struct StructuredPatientFacts {
    bool covid_positive = false;
    bool needs_hospitalization_or_oxygen = false;
    bool high_risk = false;
    double egfr_ml_min = 0.0;
    bool severe_hepatic_impairment = false;
    bool unmanageable_paxlovid_interactions = false;
    bool remdesivir_accessible = false;
    double weight_kg = 0.0;
    int age_years = 0;

    friend bool operator==(const StructuredPatientFacts&, const StructuredPatientFacts&) = default;
};

/// Throws std::invalid_argument when a numeric field is out of range.
void validate_facts(const StructuredPatientFacts& facts);

/// Strict: every field required, unknown keys rejected, ranges validated.
StructuredPatientFacts facts_from_json(const nlohmann::json& j);
nlohmann::json facts_to_json(const StructuredPatientFacts& facts);

/// Fixed vocabulary of clinical checks that a node can be bound to.
enum class Predicate {
    CovidPositive,
    NeedsHospitalizationOrOxygen,
    HighRisk,
    SevereRenalOrHepaticImpairment,  // eGFR < 30 or severe hepatic impairment
    UnmanageablePaxlovidInteractions,
    EgfrAtLeast60,
    RemdesivirAccessible,
    WeightAtLeast40kg,
    AgeAtLeast18,
};

inline constexpr double kSevereRenalEgfr = 30.0;
inline constexpr double kFullDosePaxlovidEgfr = 60.0;
inline constexpr double kStandardRemdesivirWeightKg = 40.0;
inline constexpr int kAdultAgeYears = 18;

std::string_view to_string(Predicate p) noexcept;
std::optional<Predicate> predicate_from_string(std::string_view name);
std::vector<Predicate> all_predicates();

bool apply_predicate(Predicate p, const StructuredPatientFacts& facts);

/// Static map from node id to the predicate that answers its question.
class PredicateBindings {
public:
    PredicateBindings() = default;
    explicit PredicateBindings(std::map<std::string, Predicate> bindings);

    std::optional<Predicate> find(std::string_view node_id) const;
    const std::map<std::string, Predicate>& entries() const noexcept { return bindings_; }

private:
    std::map<std::string, Predicate> bindings_;
};

PredicateBindings parse_bindings(std::string_view content);
PredicateBindings load_bindings(const std::string& path);

class UnboundPredicateError : public std::runtime_error {
public:
    explicit UnboundPredicateError(const std::string& node_id);
    const std::string& node_id() const noexcept { return node_id_; }

private:
    std::string node_id_;
};

struct Evaluation {
    LeafRecommendation leaf;
    PathDescriptor path;
};

/// Walks the tree answering every question with its bound predicate.
Evaluation evaluate_facts(const GuidelineTree& tree, const PredicateBindings& bindings,
                          const StructuredPatientFacts& facts);

}  // namespace cpg
