#include "cpgllm/prompt.hpp"

#include "cpgllm/io.hpp"

#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

PromptBudgetExceeded::PromptBudgetExceeded(std::size_t size, std::size_t budget)
    : PromptError("rendered prompt has " + std::to_string(size) + " characters, budget is " +
                  std::to_string(budget)),
      size_(size),
      budget_(budget) {}

std::string_view to_string(PromptKind kind) noexcept {
    switch (kind) {
        case PromptKind::BdtQuestion: return "bdt_question";
        case PromptKind::BdtYesNo: return "bdt_yesno";
        case PromptKind::CotFsp: return "cot_fsp";
        case PromptKind::Pagc: return "pagc";
        case PromptKind::Zsp: return "zsp";
    }
    return "unknown";
}

namespace {

std::string required_text(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end()) throw PromptError(std::string("templates: missing \"") + key + "\"");
    if (!it->is_string()) throw PromptError(std::string("templates: \"") + key + "\" must be a string");
    auto text = it->get<std::string>();
    if (text.empty()) throw PromptError(std::string("templates: \"") + key + "\" must not be empty");
    return text;
}

std::vector<FewShotExample> examples(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end()) throw PromptError(std::string("templates: missing \"") + key + "\"");
    if (!it->is_array()) throw PromptError(std::string("templates: \"") + key + "\" must be a list");
    std::vector<FewShotExample> out;
    for (const auto& item : *it) {
        if (!item.is_object() || item.size() != 2)
            throw PromptError(std::string("templates: entries of \"") + key +
                              "\" need exactly input_text and output_text");
        FewShotExample ex{required_text(item, "input_text"), required_text(item, "output_text")};
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

TemplateSet parse_templates(std::string_view content, bool canonical) {
    json doc;
    try {
        doc = json::parse(content);
    } catch (const json::parse_error& e) {
        throw PromptError(std::string("templates: ") + e.what());
    }
    if (!doc.is_object()) throw PromptError("templates: expected a JSON object");
    static const char* const known[] = {"task_description", "yesno_task_description", "few_shot_bdt", "few_shot_cot",
                                        "few_shot_pagc",    "section_separator",      "final_query"};
    for (const auto& [key, value] : doc.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw PromptError("templates: unknown field \"" + key + "\"");
    }
    TemplateSet t;
    t.task_description = required_text(doc, "task_description");
    t.yesno_task_description = required_text(doc, "yesno_task_description");
    t.few_shot_bdt = examples(doc, "few_shot_bdt");
    t.few_shot_cot = examples(doc, "few_shot_cot");
    t.few_shot_pagc = examples(doc, "few_shot_pagc");
    t.section_separator = required_text(doc, "section_separator");
    t.final_query = required_text(doc, "final_query");
    if (canonical) {
        if (t.few_shot_cot.size() != kCanonicalFewShotCount)
            throw PromptError("templates: canonical set needs exactly 5 CoT examples");
        if (t.few_shot_pagc.size() != kCanonicalFewShotCount)
            throw PromptError("templates: canonical set needs exactly 5 PAGC examples");
    }
    return t;
}

TemplateSet load_templates(const std::string& path, bool canonical) {
    return parse_templates(read_text_file(path), canonical);
}

namespace {

std::string join_sections(const std::vector<std::string>& sections, const std::string& separator) {
    std::string out;
    for (std::size_t i = 0; i < sections.size(); ++i) {
        if (i) out += separator;
        out += sections[i];
    }
    return out;
}

std::string few_shot_section(const std::vector<FewShotExample>& shots) {
    std::string out;
    for (std::size_t i = 0; i < shots.size(); ++i) {
        if (i) out += "\n\n";
        out += "Example " + std::to_string(i + 1) + "\nInput:\n" + shots[i].input_text + "\nOutput:\n" +
               shots[i].output_text;
    }
    return out;
}

std::string patient_section(std::string_view patient) { return "Patient description:\n" + std::string(patient); }

PromptBundle finish(PromptKind kind, std::string text, const RenderOptions& options) {
    if (text.size() > options.max_chars) throw PromptBudgetExceeded(text.size(), options.max_chars);
    return PromptBundle(kind, std::move(text));
}

std::string quote_text(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

PromptBundle render_bdt_question(const TemplateSet& templates, std::string_view patient, const DecisionNode& node,
                                 const RenderOptions& options) {
    if (patient.empty()) throw PromptError("patient description must not be empty");
    std::vector<std::string> sections{templates.task_description};
    if (!templates.few_shot_bdt.empty()) sections.push_back(few_shot_section(templates.few_shot_bdt));
    sections.push_back(patient_section(patient));
    sections.push_back("Answer the question below about the patient in one sentence.\nQuestion: " + node.question);
    return finish(PromptKind::BdtQuestion, join_sections(sections, templates.section_separator), options);
}

PromptBundle render_bdt_yesno(const TemplateSet& templates, const DecisionNode& node, std::string_view model_response,
                              const RenderOptions& options) {
    if (model_response.empty()) throw PromptError("model response must not be empty");
    std::vector<std::string> sections{
        std::string(kYesNoInstruction),
        templates.yesno_task_description,
        "Question: " + node.question,
        std::string(kResponseMarker) + std::string(model_response),
    };
    return finish(PromptKind::BdtYesNo, join_sections(sections, templates.section_separator), options);
}

namespace {

// A rendered step: either one question or an OR-chain of questions, with an
// optional follow-up question nested under the YES branch.
struct Step {
    std::vector<std::string> chain;
    std::optional<std::string> followup;
};

class IfElseBuilder {
public:
    explicit IfElseBuilder(const GuidelineTree& tree) : tree_(tree), parents_(tree.parent_counts()) {}

    std::string build() {
        if (tree_.is_leaf(tree_.root()))
            return "Step 1: Recommend " + quote_text(tree_.leaf(tree_.root()).label) + " and stop.";
        visit(tree_.root());
        std::ostringstream out;
        for (std::size_t i = 0; i < steps_.size(); ++i) {
            if (i) out << '\n';
            out << "Step " << (i + 1) << ": " << describe(steps_[i]);
        }
        return out.str();
    }

private:
    bool single_parent(const std::string& id) const { return parents_.at(id) == 1; }

    bool leaf_children(const std::string& id) const {
        const auto& n = tree_.node(id);
        return tree_.is_leaf(n.yes_target) && tree_.is_leaf(n.no_target);
    }

    const std::string& yes_exit(const Step& s) const { return tree_.node(s.chain.front()).yes_target; }
    const std::string& no_exit(const Step& s) const { return tree_.node(s.chain.back()).no_target; }

    void visit(const std::string& id) {
        if (!tree_.is_node(id) || step_of_.count(id)) return;
        Step step{{id}, std::nullopt};
        const std::string& shared_yes = tree_.node(id).yes_target;
        for (;;) {
            const std::string& next = tree_.node(step.chain.back()).no_target;
            if (!tree_.is_node(next) || !single_parent(next) || tree_.node(next).yes_target != shared_yes) break;
            step.chain.push_back(next);
        }
        if (step.chain.size() == 1 && tree_.is_node(shared_yes) && single_parent(shared_yes) &&
            leaf_children(shared_yes))
            step.followup = shared_yes;

        const std::size_t index = steps_.size();
        for (const auto& member : step.chain) step_of_[member] = index;
        if (step.followup) step_of_[*step.followup] = index;
        steps_.push_back(step);

        const std::string no_target = no_exit(step);
        const std::string yes_target = step.followup ? std::string() : yes_exit(step);
        visit(no_target);
        if (!yes_target.empty()) visit(yes_target);
    }

    std::string action(const std::string& target) const {
        if (tree_.is_leaf(target)) return "recommend " + quote_text(tree_.leaf(target).label) + " and stop";
        return "go to step " + std::to_string(step_of_.at(target) + 1);
    }

    std::string describe(const Step& s) const {
        std::string yes_action;
        if (s.followup) {
            const auto& f = tree_.node(*s.followup);
            yes_action = "ask: " + f.question + " If yes, " + action(f.yes_target) + "; if no, " +
                         action(f.no_target);
        } else {
            yes_action = action(yes_exit(s));
        }
        if (s.chain.size() == 1) {
            return tree_.node(s.chain.front()).question + " If yes, " + yes_action + ". If no, " +
                   action(no_exit(s)) + ".";
        }
        std::string text = "Check the following:";
        for (std::size_t i = 0; i < s.chain.size(); ++i)
            text += std::string(" (") + static_cast<char>('a' + i) + ") " + tree_.node(s.chain[i]).question;
        return text + " If any answer is yes, " + yes_action + ". If all answers are no, " + action(no_exit(s)) +
               ".";
    }

    const GuidelineTree& tree_;
    std::map<std::string, std::size_t> parents_;
    std::vector<Step> steps_;
    std::map<std::string, std::size_t> step_of_;
};

}  // namespace

std::string render_ifelse_description(const GuidelineTree& tree) { return IfElseBuilder(tree).build(); }

std::string render_graph_program(const GuidelineTree& tree) {
    std::ostringstream out;
    out << "// Guideline decision graph\n";
    out << "graph " << quote_text(tree.version()) << "\n";
    out << "root " << tree.root() << "\n";
    for (const auto& [id, n] : tree.nodes()) out << "node " << id << ' ' << quote_text(n.question) << '\n';
    for (const auto& [id, l] : tree.leaves()) out << "leaf " << id << ' ' << quote_text(l.label) << '\n';
    for (const auto& [id, n] : tree.nodes()) {
        out << "edge " << id << " -> " << n.yes_target << " [YES]\n";
        out << "edge " << id << " -> " << n.no_target << " [NO]\n";
    }
    out << "// Candidate selection routine:\n"
           "// 1. For every node, compare its question with the patient description.\n"
           "// 2. Mark the node as a candidate with YES when the description supports it, otherwise NO.\n"
           "// 3. Start at the root and follow the edge whose label matches the mark of the current node.\n"
           "// 4. Stop at the first leaf reached; that leaf is the recommendation.\n"
           "// 5. Report the candidate nodes, the traced path, and the leaf text verbatim as the recommendation.";
    return out.str();
}

PromptBundle render_cot_prompt(const TemplateSet& templates, std::string_view patient, const GuidelineTree& tree,
                               const RenderOptions& options) {
    if (patient.empty()) throw PromptError("patient description must not be empty");
    std::vector<std::string> sections{
        templates.task_description,
        few_shot_section(templates.few_shot_cot),
        "Work through these guideline steps in order, explaining each step, and finish with "
        "\"Recommendation: <treatment>\".\n" +
            render_ifelse_description(tree),
        patient_section(patient),
    };
    return finish(PromptKind::CotFsp, join_sections(sections, templates.section_separator), options);
}

PromptBundle render_pagc_prompt(const TemplateSet& templates, std::string_view patient, const GuidelineTree& tree,
                                const RenderOptions& options) {
    if (patient.empty()) throw PromptError("patient description must not be empty");
    std::vector<std::string> sections{
        templates.task_description,
        patient_section(patient),
        "Apply the program below to the patient described above.\n" + render_graph_program(tree),
        few_shot_section(templates.few_shot_pagc),
    };
    return finish(PromptKind::Pagc, join_sections(sections, templates.section_separator), options);
}

PromptBundle render_zsp_prompt(const TemplateSet& templates, std::string_view patient, const RenderOptions& options) {
    if (patient.empty()) throw PromptError("patient description must not be empty");
    std::vector<std::string> sections{templates.task_description, patient_section(patient), templates.final_query};
    return finish(PromptKind::Zsp, join_sections(sections, templates.section_separator), options);
}

}  // namespace cpg
