#include "cpgllm/prompt.hpp"

#include "cpgllm/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <regex>

namespace cpg {
namespace {

using test::canonical_templates;
using test::canonical_tree;

constexpr const char* kPatient =
    "A 58-year-old man tested positive for COVID-19 two days ago. He has type 2 diabetes and his eGFR is 48 "
    "ml/min. He does not need oxygen and takes no interacting medications.";

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
    return n;
}

// Compares against tests/golden/<name>; CPGLLM_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::string& actual) {
    const auto path = test::golden_path(name);
    if (const char* update = std::getenv("CPGLLM_UPDATE_GOLDEN"); update && std::string(update) == "1") {
        write_text_file(path, actual);
        return;
    }
    std::string expected;
    ASSERT_NO_THROW(expected = read_text_file(path)) << "missing snapshot " << path;
    EXPECT_EQ(actual, expected) << "snapshot " << name << " differs";
}

TEST(Templates, CanonicalSetHasFiveCotAndPagcExamples) {
    const auto& t = canonical_templates();
    EXPECT_EQ(t.few_shot_cot.size(), 5u);
    EXPECT_EQ(t.few_shot_pagc.size(), 5u);
    EXPECT_EQ(t.section_separator, "\n\n###\n\n");
}

TEST(Templates, CanonicalFlagEnforcesExampleCount) {
    const std::string doc = R"({"task_description":"t","yesno_task_description":"y","few_shot_bdt":[],
        "few_shot_cot":[{"input_text":"i","output_text":"o"}],"few_shot_pagc":[],
        "section_separator":"\n","final_query":"q"})";
    EXPECT_NO_THROW(parse_templates(doc, false));
    EXPECT_THROW(parse_templates(doc, true), PromptError);
    EXPECT_THROW(parse_templates(R"({"task_description":""})"), PromptError);
}

TEST(Templates, FewShotInputsDoNotLeakCorpusPatients) {
    const auto& t = canonical_templates();
    for (const auto& c : test::canonical_corpus().cases) {
        for (const auto* shots : {&t.few_shot_bdt, &t.few_shot_cot, &t.few_shot_pagc})
            for (const auto& ex : *shots) EXPECT_EQ(ex.input_text.find(c.description), std::string::npos) << c.id;
    }
}

TEST(BdtQuestion, EndsWithQuestionAndIsDeterministic) {
    const auto& root = canonical_tree().node(canonical_tree().root());
    const auto a = render_bdt_question(canonical_templates(), kPatient, root);
    const auto b = render_bdt_question(canonical_templates(), kPatient, root);
    EXPECT_EQ(a.kind(), PromptKind::BdtQuestion);
    EXPECT_EQ(a.text(), b.text());
    EXPECT_TRUE(a.text().ends_with(root.question));
    const auto task = a.text().find(canonical_templates().task_description);
    const auto patient = a.text().find(kPatient);
    EXPECT_EQ(task, 0u);
    EXPECT_LT(task, patient);
    expect_golden("bdt_question_covid_test.txt", a.text());
}

TEST(BdtQuestion, HospitalizationQuestionAppearsOnce) {
    const auto& node = canonical_tree().node("hospitalization");
    const auto text = render_bdt_question(canonical_templates(), kPatient, node).text();
    const auto tail = text.substr(text.find(kPatient));
    EXPECT_EQ(count_of(tail, node.question), 1u);
    EXPECT_TRUE(tail.ends_with(node.question));
    expect_golden("bdt_question_hospitalization.txt", text);
}

TEST(BdtYesNo, StartsWithInstruction) {
    const auto& root = canonical_tree().node("covid_test");
    const auto p = render_bdt_yesno(canonical_templates(), root, "The patient tested positive.");
    EXPECT_EQ(p.text().substr(0, p.text().find('\n')), "Response YES or NO?");
    EXPECT_TRUE(p.text().ends_with("The patient tested positive."));
    EXPECT_EQ(p.text(), render_bdt_yesno(canonical_templates(), root, "The patient tested positive.").text());
    EXPECT_THROW(render_bdt_yesno(canonical_templates(), root, ""), PromptError);
    expect_golden("bdt_yesno_covid_test.txt", p.text());
}

TEST(IfElse, SevenStepsCoveringEveryLeaf) {
    const auto text = render_ifelse_description(canonical_tree());
    const std::regex step(R"(^Step (\d+): )", std::regex::multiline);
    std::vector<int> numbers;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), step); it != std::sregex_iterator(); ++it)
        numbers.push_back(std::stoi((*it)[1]));
    ASSERT_EQ(numbers.size(), 7u);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(numbers[static_cast<std::size_t>(i)], i + 1);

    const auto step1 = text.substr(0, text.find('\n'));
    EXPECT_NE(step1.find(canonical_tree().node("covid_test").question), std::string::npos);
    const auto if_no = step1.find("If no,");
    ASSERT_NE(if_no, std::string::npos);
    EXPECT_NE(step1.find("Vaccination and booster is recommended", if_no), std::string::npos);
    EXPECT_NE(text.find("monitoring and supportive care"), std::string::npos);
    for (const auto& [id, leaf] : canonical_tree().leaves()) EXPECT_NE(text.find(leaf.label), std::string::npos) << id;
    for (const auto& [id, node] : canonical_tree().nodes()) EXPECT_NE(text.find(node.question), std::string::npos) << id;
    expect_golden("ifelse.txt", text);
}

TEST(IfElse, SingleLeafTree) {
    const auto tree = parse_guideline(R"({"version":"v","root":"x","nodes":{},"leaves":{"x":{"label":"Rest"}}})");
    EXPECT_EQ(render_ifelse_description(tree), "Step 1: Recommend \"Rest\" and stop.");
}

TEST(GraphProgram, DeclaresEveryLeafOnceAndTwoEdgesPerNode) {
    const auto& tree = canonical_tree();
    const auto text = render_graph_program(tree);
    EXPECT_EQ(count_of(text, "\nleaf "), 8u);
    EXPECT_EQ(count_of(text, "\nnode "), tree.nodes().size());
    EXPECT_EQ(count_of(text, "\nedge "), 2 * tree.nodes().size());
    for (const auto& [id, leaf] : tree.leaves()) EXPECT_EQ(count_of(text, "\"" + leaf.label + "\""), 1u) << id;
    EXPECT_NE(text.find("candidate"), std::string::npos);
    EXPECT_EQ(text, render_graph_program(tree));
    expect_golden("graph_program.txt", text);
}

TEST(CotPrompt, FiveExamplesAndIfElseSection) {
    const auto p = render_cot_prompt(canonical_templates(), kPatient, canonical_tree());
    EXPECT_EQ(p.kind(), PromptKind::CotFsp);
    EXPECT_EQ(count_of(p.text(), "Example "), 5u);
    for (const auto& ex : canonical_templates().few_shot_cot) EXPECT_NE(p.text().find(ex.input_text), std::string::npos);
    EXPECT_NE(p.text().find(render_ifelse_description(canonical_tree())), std::string::npos);
    EXPECT_TRUE(p.text().ends_with(kPatient));
    EXPECT_EQ(p.text(), render_cot_prompt(canonical_templates(), kPatient, canonical_tree()).text());
    expect_golden("cot_fsp.txt", p.text());
}

TEST(PagcPrompt, EmbedsProgramAndExamples) {
    const auto p = render_pagc_prompt(canonical_templates(), kPatient, canonical_tree());
    EXPECT_EQ(p.kind(), PromptKind::Pagc);
    EXPECT_NE(p.text().find(render_graph_program(canonical_tree())), std::string::npos);
    EXPECT_EQ(count_of(p.text(), "Example "), 5u);
    expect_golden("pagc.txt", p.text());
}

TEST(ZspPrompt, CarriesNoGuidelineContent) {
    const auto p = render_zsp_prompt(canonical_templates(), kPatient);
    EXPECT_EQ(p.kind(), PromptKind::Zsp);
    for (const auto& [id, node] : canonical_tree().nodes()) EXPECT_EQ(p.text().find(node.question), std::string::npos);
    EXPECT_EQ(p.text().find("Step 1:"), std::string::npos);
    EXPECT_EQ(p.text().find("Example "), std::string::npos);
    EXPECT_EQ(p.text().find("edge "), std::string::npos);
    EXPECT_TRUE(p.text().ends_with(canonical_templates().final_query));
    EXPECT_THROW(render_zsp_prompt(canonical_templates(), ""), PromptError);
    EXPECT_EQ(p.text(), render_zsp_prompt(canonical_templates(), kPatient).text());
    expect_golden("zsp.txt", p.text());
}

TEST(Budget, ExceedingIsAnErrorNotATruncation) {
    RenderOptions tight{100};
    try {
        render_cot_prompt(canonical_templates(), kPatient, canonical_tree(), tight);
        FAIL();
    } catch (const PromptBudgetExceeded& e) {
        EXPECT_EQ(e.budget(), 100u);
        EXPECT_GT(e.size(), 100u);
    }
    const auto full = render_zsp_prompt(canonical_templates(), kPatient);
    RenderOptions exact{full.text().size()};
    EXPECT_NO_THROW(render_zsp_prompt(canonical_templates(), kPatient, exact));
}

TEST(Prompts, CanonicalPromptsFitDefaultBudget) {
    for (const auto& c : test::canonical_corpus().cases) {
        EXPECT_NO_THROW(render_cot_prompt(canonical_templates(), c.description, canonical_tree()));
        EXPECT_NO_THROW(render_pagc_prompt(canonical_templates(), c.description, canonical_tree()));
    }
}

}  // namespace
}  // namespace cpg
