#pragma once

#include "cpgllm/guideline.hpp"
#include "cpgllm/llm_backend.hpp"
#include "cpgllm/prompt.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cpg {

enum class MethodKind { Bdt, CotFsp, Pagc, Zsp };

/// Wire names: "bdt", "cot_fsp", "pagc", "zsp".
std::string_view to_string(MethodKind method) noexcept;
/// Display names: "BDT", "CoT-FSP", "PAGC", "ZSP".
std::string_view display_name(MethodKind method) noexcept;
std::optional<MethodKind> method_from_string(std::string_view name);
std::vector<MethodKind> all_methods();

enum class Verdict { Yes, No, Ambiguous };

std::string_view to_string(Verdict v) noexcept;

struct TraceStep {
    std::optional<std::string> node_id;
    PromptKind prompt_kind = PromptKind::Zsp;
    std::string prompt_text;
    std::string response_text;
    std::optional<Verdict> verdict;
};

struct RecommendationTrace {
    MethodKind method = MethodKind::Bdt;
    std::optional<std::int64_t> seed;
    std::vector<TraceStep> steps;
    std::optional<LeafRecommendation> final_leaf;

    /// Node ids visited by a BDT run, in order.
    std::vector<std::string> visited_nodes() const;
};

nlohmann::json trace_to_json(const RecommendationTrace& trace);
RecommendationTrace trace_from_json(const nlohmann::json& j);

/// Failure of a strategy run; carries whatever trace was built so far.
class StrategyError : public std::runtime_error {
public:
    StrategyError(const std::string& message, RecommendationTrace trace);
    const RecommendationTrace& trace() const noexcept { return trace_; }
    virtual std::string_view kind() const noexcept = 0;

private:
    RecommendationTrace trace_;
};

/// A YES/NO classification reply was neither YES nor NO.
class ClassificationFailure : public StrategyError {
public:
    using StrategyError::StrategyError;
    std::string_view kind() const noexcept override { return "classification_failure"; }
};

/// A single-call strategy's reply could not be mapped to one leaf.
class UnresolvedAnswer : public StrategyError {
public:
    UnresolvedAnswer(const std::string& message, RecommendationTrace trace, std::string raw_text);
    const std::string& raw_text() const noexcept { return raw_; }
    std::string_view kind() const noexcept override { return "unresolved_answer"; }

private:
    std::string raw_;
};

/// The backend raised; the original message is preserved.
class StrategyBackendFailure : public StrategyError {
public:
    using StrategyError::StrategyError;
    std::string_view kind() const noexcept override { return "backend_failure"; }
};

// ---- canonicalization ---------------------------------------------------

inline constexpr double kCanonicalAcceptScore = 0.5;
inline constexpr double kCanonicalMargin = 0.1;

struct CanonicalAnswer {
    LeafRecommendation leaf;
    double match_score = 0.0;
    std::vector<std::string> matched_phrases;
};

class CanonicalizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoMatchError : public CanonicalizationError {
public:
    using CanonicalizationError::CanonicalizationError;
};

class AmbiguousAnswerError : public CanonicalizationError {
public:
    using CanonicalizationError::CanonicalizationError;
};

/// Per-leaf scores, in the order of `leaves`.
std::vector<CanonicalAnswer> score_answer(std::string_view text, std::span<const LeafRecommendation> leaves);

/// Maps free text to the unique best-scoring leaf.
///
/// Each leaf label is reduced to features: treatment concepts (drug names and
/// the fixed non-drug treatment terms) weigh 3, dosage figures weigh 2/df and
/// other words 1/df, where df counts the labels sharing the feature. Words
/// only count for labels that carry neither concepts nor figures. A leaf's
/// score is the matched share of its feature weight. The winner needs a
/// score of at least 0.5 and a lead of at least 0.1 over the runner-up.
CanonicalAnswer canonicalize_answer(std::string_view text, std::span<const LeafRecommendation> leaves);

// ---- runners ------------------------------------------------------------

struct RunOptions {
    std::optional<std::int64_t> seed;
    std::string case_id;
    RenderOptions render;
};

/// YES if the first alphabetic token is "yes", NO if "no", else AMBIGUOUS.
Verdict parse_verdict(std::string_view reply);

Verdict classify_yes_no(const TemplateSet& templates, const DecisionNode& node, std::string_view response,
                        Backend& backend, const RunOptions& options = {});

RecommendationTrace run_bdt(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                            Backend& backend, const RunOptions& options = {});

RecommendationTrace run_cot_fsp(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                                Backend& backend, const RunOptions& options = {});

RecommendationTrace run_pagc(const GuidelineTree& tree, std::string_view patient, const TemplateSet& templates,
                             Backend& backend, const RunOptions& options = {});

RecommendationTrace run_zsp(std::string_view patient, const TemplateSet& templates,
                            std::span<const LeafRecommendation> leaves, Backend& backend,
                            const RunOptions& options = {});

RecommendationTrace run_method(MethodKind method, const GuidelineTree& tree, std::string_view patient,
                               const TemplateSet& templates, Backend& backend, const RunOptions& options = {});

}  // namespace cpg
