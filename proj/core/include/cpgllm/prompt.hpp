#pragma once

#include "cpgllm/guideline.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpg {

struct FewShotExample {
    std::string input_text;
    std::string output_text;
};

struct TemplateSet {
    std::string task_description;
    std::string yesno_task_description;
    std::vector<FewShotExample> few_shot_bdt;
    std::vector<FewShotExample> few_shot_cot;
    std::vector<FewShotExample> few_shot_pagc;
    std::string section_separator;
    std::string final_query;
};

inline constexpr std::size_t kCanonicalFewShotCount = 5;

/// Parses a template file. `canonical` additionally requires exactly five
/// CoT and five PAGC examples.
TemplateSet parse_templates(std::string_view content, bool canonical = false);
TemplateSet load_templates(const std::string& path, bool canonical = false);

enum class PromptKind { BdtQuestion, BdtYesNo, CotFsp, Pagc, Zsp };

std::string_view to_string(PromptKind kind) noexcept;

class PromptBundle {
public:
    PromptBundle(PromptKind kind, std::string text) : kind_(kind), text_(std::move(text)) {}

    PromptKind kind() const noexcept { return kind_; }
    const std::string& text() const noexcept { return text_; }

private:
    PromptKind kind_;
    std::string text_;
};

class PromptError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class PromptBudgetExceeded : public PromptError {
public:
    PromptBudgetExceeded(std::size_t size, std::size_t budget);
    std::size_t size() const noexcept { return size_; }
    std::size_t budget() const noexcept { return budget_; }

private:
    std::size_t size_;
    std::size_t budget_;
};

inline constexpr std::size_t kDefaultPromptBudget = 24000;

struct RenderOptions {
    std::size_t max_chars = kDefaultPromptBudget;
};

/// Literal first line of every BDT classification prompt.
inline constexpr std::string_view kYesNoInstruction = "Response YES or NO?";

/// Marker that introduces the model's answer inside a YES/NO prompt.
inline constexpr std::string_view kResponseMarker = "Response to classify:\n";

PromptBundle render_bdt_question(const TemplateSet& templates, std::string_view patient, const DecisionNode& node,
                                 const RenderOptions& options = {});

PromptBundle render_bdt_yesno(const TemplateSet& templates, const DecisionNode& node,
                              std::string_view model_response, const RenderOptions& options = {});

/// Numbered if-else walk through the guideline, one step per checkpoint.
std::string render_ifelse_description(const GuidelineTree& tree);

/// Node/edge declarations plus the candidate-selection routine.
std::string render_graph_program(const GuidelineTree& tree);

PromptBundle render_cot_prompt(const TemplateSet& templates, std::string_view patient, const GuidelineTree& tree,
                               const RenderOptions& options = {});

PromptBundle render_pagc_prompt(const TemplateSet& templates, std::string_view patient, const GuidelineTree& tree,
                                const RenderOptions& options = {});

PromptBundle render_zsp_prompt(const TemplateSet& templates, std::string_view patient,
                               const RenderOptions& options = {});

}  // namespace cpg
