#include "cpgllm/evaluation.hpp"

#include "cpgllm/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

namespace cpg {
namespace {

using test::canonical_bindings;
using test::canonical_corpus;
using test::canonical_templates;
using test::canonical_tree;

// ---- independent oracles --------------------------------------------------

// Macro-F1 from an explicit confusion matrix; "" marks a failed prediction.
double oracle_macro_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
    std::vector<std::string> classes;
    for (const auto& g : gold)
        if (std::find(classes.begin(), classes.end(), g) == classes.end()) classes.push_back(g);
    double sum = 0;
    for (const auto& c : classes) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            if (gold[i] == c && pred[i] == c) tp += 1;
            if (gold[i] != c && pred[i] == c) fp += 1;
            if (gold[i] == c && pred[i] != c) fn += 1;
        }
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0;
        sum += p + r > 0 ? 2 * p * r / (p + r) : 0;
    }
    return sum / static_cast<double>(classes.size());
}

// Gwet's multi-rater AC1 from per-item category counts.
double oracle_ac1(const std::vector<std::vector<int>>& raters, int q) {
    const auto n = raters.front().size();
    const double r = static_cast<double>(raters.size());
    std::vector<double> pi(static_cast<std::size_t>(q), 0.0);
    double pa = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> counts(static_cast<std::size_t>(q), 0.0);
        for (const auto& rater : raters) counts[static_cast<std::size_t>(rater[i])] += 1;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            pa += counts[k] * (counts[k] - 1) / (r * (r - 1));
            pi[k] += counts[k] / r;
        }
    }
    pa /= static_cast<double>(n);
    double pe = 0;
    for (double& p : pi) {
        p /= static_cast<double>(n);
        pe += p * (1 - p);
    }
    pe /= q - 1;
    return (pa - pe) / (1 - pe);
}

std::vector<std::optional<std::string>> as_predictions(const std::vector<std::string>& pred) {
    std::vector<std::optional<std::string>> out;
    for (const auto& p : pred) out.push_back(p.empty() ? std::nullopt : std::optional<std::string>(p));
    return out;
}

PredictionRecord record(std::string gold, std::optional<std::string> pred, std::int64_t seed,
                        MethodKind method = MethodKind::Bdt) {
    PredictionRecord r;
    r.case_id = "c";
    r.seed = seed;
    r.method = method;
    r.gold_label = std::move(gold);
    r.predicted_label = pred;
    if (!pred) r.failure_kind = "classification_failure";
    return r;
}

// ---- macro-F1 -------------------------------------------------------------

TEST(MacroF1, ToySetMatchesHandComputation) {
    const std::vector<std::string> gold{"A", "B", "C"};
    const std::vector<std::string> pred{"A", "A", "C"};
    // A: P 1/2, R 1, F1 2/3; B: F1 0; C: F1 1.
    EXPECT_NEAR(oracle_macro_f1(gold, pred), 5.0 / 9.0, 1e-15);
    EXPECT_NEAR(macro_f1(gold, as_predictions(pred)), oracle_macro_f1(gold, pred), 1e-12);
}

TEST(MacroF1, AllWrongIsZeroAllRightIsOne) {
    const std::vector<std::string> gold{"A", "B", "C"};
    EXPECT_DOUBLE_EQ(macro_f1(gold, as_predictions({"B", "C", "A"})), 0.0);
    EXPECT_DOUBLE_EQ(macro_f1(gold, as_predictions({"", "", ""})), 0.0);
    EXPECT_DOUBLE_EQ(macro_f1(gold, as_predictions(gold)), 1.0);
}

TEST(MacroF1, FailuresCountAgainstRecall) {
    const std::vector<std::string> gold{"A", "A", "B", "B"};
    const std::vector<std::string> pred{"A", "", "B", "B"};
    EXPECT_NEAR(macro_f1(gold, as_predictions(pred)), oracle_macro_f1(gold, pred), 1e-12);
    EXPECT_LT(macro_f1(gold, as_predictions(pred)), 1.0);
}

TEST(MacroF1, RandomisedAgainstOracleAndPermutationInvariant) {
    std::mt19937 rng(9631);
    const std::vector<std::string> classes{"A", "B", "C", "D", ""};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> gold, pred;
        const int n = 1 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            gold.push_back(classes[rng() % 4]);
            pred.push_back(classes[rng() % 5]);
        }
        const double expected = oracle_macro_f1(gold, pred);
        ASSERT_NEAR(macro_f1(gold, as_predictions(pred)), expected, 1e-12);
        ASSERT_GE(expected, 0.0);
        ASSERT_LE(expected, 1.0);
        std::vector<std::size_t> order(gold.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::string> g2, p2;
        for (auto i : order) {
            g2.push_back(gold[i]);
            p2.push_back(pred[i]);
        }
        ASSERT_NEAR(macro_f1(g2, as_predictions(p2)), expected, 1e-12);
    }
}

TEST(MacroF1, RejectsBadInput) {
    const std::vector<std::string> gold{"A"};
    EXPECT_THROW(macro_f1(gold, as_predictions({"A", "B"})), EvaluationError);
    EXPECT_THROW(macro_f1({}, {}), EvaluationError);
}

// ---- compute_metrics ------------------------------------------------------

TEST(Metrics, PerSeedAndMean) {
    const std::vector<std::string> labels{"A", "B", "C"};
    std::vector<PredictionRecord> records{
        record("A", "A", 1), record("B", "A", 1), record("C", "C", 1),
        record("A", "A", 2), record("B", "B", 2), record("C", std::nullopt, 2),
    };
    const auto report = compute_metrics(records, labels, "m");
    ASSERT_EQ(report.per_seed.size(), 2u);
    EXPECT_EQ(report.per_seed[0].seed, 1);
    EXPECT_NEAR(report.per_seed[0].macro_f1, oracle_macro_f1({"A", "B", "C"}, {"A", "A", "C"}), 1e-12);
    EXPECT_NEAR(report.per_seed[1].macro_f1, oracle_macro_f1({"A", "B", "C"}, {"A", "B", ""}), 1e-12);
    EXPECT_NEAR(report.mean_macro_f1, (report.per_seed[0].macro_f1 + report.per_seed[1].macro_f1) / 2, 1e-12);
    EXPECT_NEAR(report.per_seed[0].accuracy, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(report.accuracy, 4.0 / 6.0, 1e-12);
    EXPECT_EQ(report.failures, 1u);
    EXPECT_EQ(report.records, 6u);
    EXPECT_EQ(report.model, "m");
    ASSERT_EQ(report.confusion.size(), 3u);
    EXPECT_EQ(report.confusion[1][0], 1u);  // B predicted as A
    EXPECT_EQ(report.confusion[2][3], 1u);  // C failed
    EXPECT_EQ(report.confusion[0][0], 2u);
    EXPECT_EQ(report.selected, report.mean_macro_f1 > 0.5);
}

TEST(Metrics, AllWrongIsNotSelected) {
    const std::vector<std::string> labels{"A", "B"};
    std::vector<PredictionRecord> records{record("A", "B", 1), record("B", "A", 1)};
    const auto report = compute_metrics(records, labels);
    EXPECT_DOUBLE_EQ(report.mean_macro_f1, 0.0);
    EXPECT_FALSE(report.selected);
}

TEST(Metrics, MixedMethodsAreRejected) {
    const std::vector<std::string> labels{"A"};
    std::vector<PredictionRecord> records{record("A", "A", 1), record("A", "A", 1, MethodKind::Zsp)};
    EXPECT_THROW(compute_metrics(records, labels), EvaluationError);
    EXPECT_THROW(compute_metrics({}, labels), EvaluationError);
}

// ---- selection ------------------------------------------------------------

std::vector<ScoreEntry> table2() {
    return {
        {"GPT-4", "BDT", 1.00},         {"GPT-4", "CoT-FSP", 0.97},         {"GPT-4", "PAGC", 0.83},
        {"GPT-4", "ZSP", 0.47},         {"GPT-3.5 Turbo", "BDT", 0.85},     {"GPT-3.5 Turbo", "CoT-FSP", 0.69},
        {"GPT-3.5 Turbo", "PAGC", 0.38}, {"GPT-3.5 Turbo", "ZSP", 0.26},    {"LLaMA-13b", "BDT", 0.37},
        {"LLaMA-13b", "CoT-FSP", 0.31}, {"LLaMA-13b", "PAGC", 0.42},       {"LLaMA-13b", "ZSP", 0.31},
        {"PaLM 2", "BDT", 0.71},        {"PaLM 2", "CoT-FSP", 0.58},        {"PaLM 2", "PAGC", 0.41},
        {"PaLM 2", "ZSP", 0.01},
    };
}

TEST(Selection, PublishedScoresGiveSevenRankedMethods) {
    const auto scores = table2();
    ASSERT_EQ(scores.size(), 16u);
    const auto ranked = select_methods(scores);
    const std::vector<std::pair<std::string, std::string>> expected{
        {"GPT-4", "BDT"},          {"GPT-4", "CoT-FSP"}, {"GPT-3.5 Turbo", "BDT"},     {"GPT-4", "PAGC"},
        {"PaLM 2", "BDT"}, {"GPT-3.5 Turbo", "CoT-FSP"}, {"PaLM 2", "CoT-FSP"},
    };
    ASSERT_EQ(ranked.size(), 7u);
    const std::vector<double> order{1.00, 0.97, 0.85, 0.83, 0.71, 0.69, 0.58};
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        EXPECT_EQ(ranked[i].rank, static_cast<int>(i) + 1);
        EXPECT_DOUBLE_EQ(ranked[i].entry.score, order[i]);
        EXPECT_EQ(ranked[i].entry.model, expected[i].first);
        EXPECT_EQ(ranked[i].entry.method, expected[i].second);
        EXPECT_FALSE(ranked[i].tied);
    }
}

TEST(Selection, OrderOfInputDoesNotMatter) {
    auto scores = table2();
    const auto reference = select_methods(scores);
    std::mt19937 rng(4603);
    for (int i = 0; i < 20; ++i) {
        std::shuffle(scores.begin(), scores.end(), rng);
        const auto ranked = select_methods(scores);
        ASSERT_EQ(ranked.size(), reference.size());
        for (std::size_t k = 0; k < ranked.size(); ++k) EXPECT_EQ(ranked[k].entry.method, reference[k].entry.method);
    }
}

TEST(Selection, NothingAboveThreshold) {
    const std::vector<ScoreEntry> scores{{"m", "a", 0.5}, {"m", "b", 0.1}, {"n", "a", 0.0}};
    EXPECT_TRUE(select_methods(scores).empty());
}

TEST(Selection, TiesAreFlaggedAndOrderedByName) {
    const std::vector<ScoreEntry> scores{{"z", "BDT", 0.8}, {"a", "ZSP", 0.8}, {"a", "BDT", 0.9}, {"q", "x", 0.2}};
    const auto ranked = select_methods(scores);
    ASSERT_EQ(ranked.size(), 3u);
    EXPECT_EQ(ranked[0].entry.model, "a");
    EXPECT_FALSE(ranked[0].tied);
    EXPECT_EQ(ranked[1].entry.model, "a");
    EXPECT_EQ(ranked[1].entry.method, "ZSP");
    EXPECT_EQ(ranked[2].entry.model, "z");
    EXPECT_TRUE(ranked[1].tied);
    EXPECT_TRUE(ranked[2].tied);
    EXPECT_EQ(ranked[2].rank, 3);
}

// ---- agreement ------------------------------------------------------------

TEST(Ac1, HandFixture) {
    const std::vector<int> a{2, 2, 2, 2, 2, 2, 2, 2, 2, 1};
    const std::vector<int> b{2, 2, 2, 2, 2, 2, 2, 2, 2, 2};
    // Pa 0.9; pi (0, .05, .95); Pe = (0 + .0475 + .0475) / 2 = .0475.
    const double hand = (0.9 - 0.0475) / (1 - 0.0475);
    EXPECT_NEAR(oracle_ac1({a, b}, 3), hand, 1e-12);
    EXPECT_NEAR(gwet_ac1(a, b, 3), hand, 1e-12);
    EXPECT_NEAR(gwet_ac1(a, b, 3), 0.8950, 1e-4);
    EXPECT_DOUBLE_EQ(gwet_ac1(b, a, 3), gwet_ac1(a, b, 3));
}

TEST(Ac1, FullAgreementIsExactlyOne) {
    const std::vector<int> a{0, 1, 2, 2, 1, 0, 2};
    EXPECT_EQ(gwet_ac1(a, a, 3), 1.0);
    const std::vector<int> ones{2, 2, 2};
    EXPECT_EQ(gwet_ac1(ones, ones, 3), 1.0);
}

TEST(Ac1, RandomisedAgainstOracle) {
    std::mt19937 rng(6367);
    for (int trial = 0; trial < 300; ++trial) {
        const int q = 2 + static_cast<int>(rng() % 4);
        const std::size_t n = 1 + rng() % 30;
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<int>(rng() % static_cast<unsigned>(q));
            b[i] = rng() % 3 == 0 ? static_cast<int>(rng() % static_cast<unsigned>(q)) : a[i];
        }
        const double got = gwet_ac1(a, b, q);
        ASSERT_NEAR(got, oracle_ac1({a, b}, q), 1e-12);
        ASSERT_NEAR(gwet_ac1(b, a, q), got, 1e-12);
        std::vector<int> perm(static_cast<std::size_t>(q));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int> a2, b2;
        for (std::size_t i = 0; i < n; ++i) {
            a2.push_back(perm[static_cast<std::size_t>(a[i])]);
            b2.push_back(perm[static_cast<std::size_t>(b[i])]);
        }
        ASSERT_NEAR(gwet_ac1(a2, b2, q), got, 1e-12);
    }
}

TEST(Ac1, RejectsBadInput) {
    const std::vector<int> a{1, 2};
    const std::vector<int> b{1};
    const std::vector<int> out{1, 3};
    EXPECT_THROW(gwet_ac1(a, b, 3), std::invalid_argument);
    EXPECT_THROW(gwet_ac1({}, {}, 3), std::invalid_argument);
    EXPECT_THROW(gwet_ac1(a, out, 3), std::invalid_argument);
    EXPECT_THROW(gwet_ac1(a, a, 1), std::invalid_argument);
}

TEST(LandisKoch, PublishedRows) {
    EXPECT_EQ(interpret_landis_koch(0.87), AgreementBand::AlmostPerfect);
    EXPECT_EQ(interpret_landis_koch(0.77), AgreementBand::Substantial);
    EXPECT_EQ(interpret_landis_koch(0.60), AgreementBand::Moderate);
    EXPECT_EQ(interpret_landis_koch(0.61), AgreementBand::Substantial);
    EXPECT_EQ(to_string(AgreementBand::AlmostPerfect), "Almost Perfect");
}

TEST(LandisKoch, UpperInclusiveBoundaries) {
    EXPECT_EQ(interpret_landis_koch(-0.01), AgreementBand::Poor);
    EXPECT_EQ(interpret_landis_koch(-1.0), AgreementBand::Poor);
    EXPECT_EQ(interpret_landis_koch(0.0), AgreementBand::Slight);
    EXPECT_EQ(interpret_landis_koch(0.20), AgreementBand::Slight);
    EXPECT_EQ(interpret_landis_koch(0.2001), AgreementBand::Fair);
    EXPECT_EQ(interpret_landis_koch(0.40), AgreementBand::Fair);
    EXPECT_EQ(interpret_landis_koch(0.80), AgreementBand::Substantial);
    EXPECT_EQ(interpret_landis_koch(1.0), AgreementBand::AlmostPerfect);
    EXPECT_THROW(interpret_landis_koch(1.01), std::invalid_argument);
    EXPECT_THROW(interpret_landis_koch(-1.5), std::invalid_argument);
    EXPECT_THROW(interpret_landis_koch(std::nan("")), std::invalid_argument);
}

TEST(LandisKoch, Monotone) {
    int previous = 0;
    for (int i = -100; i <= 100; ++i) {
        const int band = static_cast<int>(interpret_landis_koch(i / 100.0));
        EXPECT_GE(band, previous);
        previous = band;
    }
}

TEST(Annotations, CsvParsing) {
    const auto records = parse_annotations_csv(
        "response_id,rater_id,category,rating\n"
        "r1,alice,incorrect_medical_content,2\n"
        "\"r,2\",bob,Harmful_Content,0\r\n");
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[1].response_id, "r,2");
    EXPECT_EQ(records[1].category, AnnotationCategory::HarmfulContent);
    EXPECT_EQ(records[1].rating, 0);
    EXPECT_THROW(parse_annotations_csv("id,rater,category,rating\n"), std::invalid_argument);
    EXPECT_THROW(parse_annotations_csv("response_id,rater_id,category,rating\nr,a,bogus,1\n"), std::invalid_argument);
    EXPECT_THROW(parse_annotations_csv("response_id,rater_id,category,rating\nr,a,harmful_content,3\n"),
                 std::invalid_argument);
    EXPECT_THROW(parse_annotations_csv("response_id,rater_id,category,rating\nr,a,harmful_content\n"),
                 std::invalid_argument);
}

TEST(Annotations, AgreementReportOnFixture) {
    const auto records = parse_annotations_csv(read_text_file(test::fixture_path("ratings_ac1.csv")));
    const auto report = agreement_report(records);
    EXPECT_EQ(report.raters[0], "rater_a");
    EXPECT_EQ(report.raters[1], "rater_b");
    EXPECT_EQ(report.item_count, 10u);
    ASSERT_EQ(report.categories.size(), 3u);
    EXPECT_NEAR(report.categories[0].ac1, 0.8950, 1e-4);
    EXPECT_EQ(report.categories[0].band, AgreementBand::AlmostPerfect);
    EXPECT_EQ(report.categories[0].items, 10u);
    EXPECT_EQ(report.categories[1].ac1, 1.0);
}

TEST(Annotations, AgreementNeedsTwoCompleteRaters) {
    EXPECT_THROW(agreement_report(parse_annotations_csv("response_id,rater_id,category,rating\n"
                                                        "r1,a,harmful_content,2\n")),
                 std::invalid_argument);
    EXPECT_THROW(agreement_report(parse_annotations_csv("response_id,rater_id,category,rating\n"
                                                        "r1,a,harmful_content,2\nr1,b,harmful_content,2\n"
                                                        "r2,a,harmful_content,2\n")),
                 std::invalid_argument);
    EXPECT_THROW(agreement_report(parse_annotations_csv("response_id,rater_id,category,rating\n"
                                                        "r1,a,harmful_content,2\nr1,b,harmful_content,2\n"
                                                        "r1,a,harmful_content,1\n")),
                 std::invalid_argument);
}

// ---- human evaluation -----------------------------------------------------

TEST(HumanEval, PublishedColumnRoundsToOneEightySix) {
    const double overall = overall_score({1.71, 2.00, 1.86});
    EXPECT_NEAR(overall, (1.71 + 2.00 + 1.86) / 3, 1e-15);
    EXPECT_EQ(format_2dp(overall), "1.86");
}

TEST(HumanEval, AllTwosArePerfect) {
    std::vector<AnnotationRecord> records;
    for (auto c : kAnnotationCategories)
        for (int i = 0; i < 7; ++i) records.push_back({"r" + std::to_string(i), "a", c, 2});
    const auto summary = aggregate_human_eval(records);
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_EQ(summary[0].group, "all");
    for (double m : summary[0].category_means) EXPECT_EQ(format_2dp(m), "2.00");
    EXPECT_EQ(format_2dp(summary[0].overall), "2.00");
}

TEST(HumanEval, SingleZeroRating) {
    std::vector<AnnotationRecord> records{{"r", "a", AnnotationCategory::IncorrectMedicalContent, 0},
                                          {"r", "a", AnnotationCategory::OmissionOfContent, 2},
                                          {"r", "a", AnnotationCategory::HarmfulContent, 2}};
    const auto summary = aggregate_human_eval(records);
    EXPECT_EQ(format_2dp(summary[0].category_means[0]), "0.00");
    EXPECT_NEAR(summary[0].overall, 4.0 / 3.0, 1e-12);
}

TEST(HumanEval, GroupsAndErrors) {
    const auto records = parse_annotations_csv(read_text_file(test::fixture_path("ratings_ac1.csv")));
    const auto groups = parse_groups_csv(read_text_file(test::fixture_path("groups.csv")));
    const auto summary = aggregate_human_eval(records, groups);
    ASSERT_EQ(summary.size(), 2u);
    for (const auto& s : summary) {
        const auto [lo, hi] = std::minmax_element(s.category_means.begin(), s.category_means.end());
        EXPECT_GE(s.overall, *lo);
        EXPECT_LE(s.overall, *hi);
    }
    const auto& palm = summary[0].group == "PaLM 2 BDT" ? summary[0] : summary[1];
    EXPECT_NEAR(palm.category_means[0], 19.0 / 10.0, 1e-12);
    EXPECT_THROW(aggregate_human_eval({}), std::invalid_argument);
    std::vector<AnnotationRecord> partial{{"r", "a", AnnotationCategory::HarmfulContent, 2}};
    EXPECT_THROW(aggregate_human_eval(partial), std::invalid_argument);
    EXPECT_THROW(aggregate_human_eval(records, {{"r01", "x"}}), std::invalid_argument);
}

TEST(HumanEval, HalfUpRounding) {
    EXPECT_EQ(format_2dp(1.857), "1.86");
    EXPECT_EQ(format_2dp(0.125), "0.13");
    EXPECT_EQ(format_2dp(0.8950), "0.90");
    EXPECT_EQ(format_2dp(1.0), "1.00");
    EXPECT_EQ(format_2dp(0.0), "0.00");
}

TEST(HumanEval, TableShape) {
    const HumanEvalSummary s{"GPT-3.5 Turbo BDT", {1.71, 2.00, 1.86}, overall_score({1.71, 2.00, 1.86}), 3};
    const std::vector<HumanEvalSummary> all{s};
    const auto table = render_human_eval_table(all);
    EXPECT_NE(table.find("GPT-3.5 Turbo BDT"), std::string::npos);
    EXPECT_NE(table.find("Incorrect medical content"), std::string::npos);
    EXPECT_NE(table.find("1.86"), std::string::npos);
    EXPECT_NE(table.find("Overall"), std::string::npos);
}

// ---- benchmark ------------------------------------------------------------

RunConfig truthful_config() {
    RunConfig config;
    config.backend.kind = BackendKind::TruthfulSim;
    return config;
}

BenchmarkContext truthful_context() {
    BenchmarkContext context;
    context.bindings = &canonical_bindings();
    return context;
}

TEST(Benchmark, TruthfulCanonicalRunIsPerfect) {
    const auto outcome =
        evaluate(canonical_corpus(), truthful_config(), canonical_tree(), canonical_templates(), truthful_context());
    ASSERT_EQ(outcome.records.size(), 39u * 4u);
    for (const auto& r : outcome.records) ASSERT_TRUE(r.correct()) << r.case_id << " " << r.seed;
    ASSERT_EQ(outcome.reports.size(), 1u);
    const auto& report = outcome.reports[0];
    EXPECT_EQ(report.mean_macro_f1, 1.0);
    EXPECT_EQ(report.per_seed.size(), 4u);
    EXPECT_TRUE(report.selected);
    EXPECT_EQ(report.rank, 1);
    EXPECT_EQ(format_2dp(report.mean_macro_f1), "1.00");
}

TEST(Benchmark, RecordOrderAndDeterminismAcrossParallelism) {
    auto config = truthful_config();
    config.parallelism = 1;
    const auto serial = run_benchmark(canonical_corpus(), config, canonical_tree(), canonical_templates(), truthful_context());
    config.parallelism = 8;
    const auto parallel = run_benchmark(canonical_corpus(), config, canonical_tree(), canonical_templates(), truthful_context());
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(record_to_json(serial[i]), record_to_json(parallel[i]));
        EXPECT_EQ(trace_to_json(serial[i].trace), trace_to_json(parallel[i].trace));
    }
    EXPECT_EQ(serial[0].seed, 9631);
    EXPECT_EQ(serial[39].seed, 4603);
    EXPECT_EQ(serial[0].case_id, canonical_corpus().cases[0].id);
}

TEST(Benchmark, OneCaseTwoSeeds) {
    Corpus one;
    one.cases.push_back(canonical_corpus().cases[0]);
    auto config = truthful_config();
    config.seeds = {9631, 4603};
    const auto records = run_benchmark(one, config, canonical_tree(), canonical_templates(), truthful_context());
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0].seed, 9631);
    EXPECT_EQ(records[1].seed, 4603);
    EXPECT_EQ(records[0].trace.seed, 9631);
}

TEST(Benchmark, ScriptWithoutMatchGivesFailureMarkers) {
    RunConfig config;
    config.backend.kind = BackendKind::Scripted;
    config.seeds = {9631};
    BenchmarkContext context;
    context.script = {{"no prompt contains this", "YES", 0, false}};
    const auto outcome = evaluate(canonical_corpus(), config, canonical_tree(), canonical_templates(), context);
    ASSERT_EQ(outcome.records.size(), 39u);
    for (const auto& r : outcome.records) {
        EXPECT_FALSE(r.predicted_label);
        EXPECT_EQ(r.failure_kind, "backend_failure");
    }
    EXPECT_EQ(outcome.reports[0].failures, 39u);
    EXPECT_EQ(outcome.reports[0].mean_macro_f1, 0.0);
    EXPECT_FALSE(outcome.reports[0].selected);
}

TEST(Benchmark, AmbiguousVerdictIsScoredWrong) {
    RunConfig config;
    config.backend.kind = BackendKind::Scripted;
    config.seeds = {9631};
    BenchmarkContext context;
    context.script = load_script(test::fixture_path("ambiguous_yesno.json"));
    const auto records = run_benchmark(canonical_corpus(), config, canonical_tree(), canonical_templates(), context);
    ASSERT_EQ(records.size(), 39u);
    for (const auto& r : records) {
        EXPECT_EQ(r.failure_kind, "classification_failure");
        EXPECT_FALSE(r.correct());
        EXPECT_EQ(r.trace.steps.size(), 2u);
    }
}

TEST(Benchmark, ConfigurationErrorsAbortUpFront) {
    auto config = truthful_config();
    EXPECT_THROW(run_benchmark(canonical_corpus(), config, canonical_tree(), canonical_templates(), {}),
                 BackendConfigError);
    config.seeds = {};
    EXPECT_THROW(validate_run_config(config), EvaluationError);
    config.seeds = {1, 1};
    EXPECT_THROW(validate_run_config(config), EvaluationError);
    config.seeds = {1};
    config.methods = {};
    EXPECT_THROW(validate_run_config(config), EvaluationError);
    config.methods = {MethodKind::Bdt};
    config.parallelism = 0;
    EXPECT_THROW(validate_run_config(config), EvaluationError);

    RunConfig http;
    http.backend.kind = BackendKind::HttpChat;
    http.backend.base_url = "not a url";
    EXPECT_THROW(run_benchmark(canonical_corpus(), http, canonical_tree(), canonical_templates(), {}),
                 BackendConfigError);
}

TEST(Benchmark, OutputsAreWritten) {
    auto config = truthful_config();
    config.seeds = {9631, 4603};
    config.methods = {MethodKind::Bdt, MethodKind::Zsp};
    const auto outcome =
        evaluate(canonical_corpus(), config, canonical_tree(), canonical_templates(), truthful_context());
    ASSERT_EQ(outcome.reports.size(), 2u);
    EXPECT_EQ(outcome.reports[1].failures, 78u);

    const auto dir = test::scratch_dir("outputs");
    write_benchmark_outputs(dir.string(), outcome, config);
    for (const char* name : {"report.json", "report.md", "predictions.jsonl", "traces.jsonl"})
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;

    const auto report = nlohmann::json::parse(read_text_file((dir / "report.json").string()));
    EXPECT_EQ(report["reports"].size(), 2u);
    EXPECT_EQ(report["selection"].size(), 1u);
    EXPECT_EQ(report["selection"][0]["method"], "bdt");
    EXPECT_EQ(report["seeds"], nlohmann::json::array({9631, 4603}));

    std::ifstream predictions(dir / "predictions.jsonl");
    std::ifstream traces(dir / "traces.jsonl");
    std::string line;
    std::vector<std::string> trace_lines;
    while (std::getline(traces, line)) trace_lines.push_back(line);
    std::size_t count = 0;
    while (std::getline(predictions, line)) {
        const auto j = nlohmann::json::parse(line);
        ++count;
        const std::string ref = j["trace_ref"];
        const auto n = std::stoul(ref.substr(ref.find(':') + 1));
        ASSERT_LE(n, trace_lines.size());
        const auto t = nlohmann::json::parse(trace_lines[n - 1]);
        EXPECT_EQ(t["case_id"], j["case_id"]);
        EXPECT_EQ(t["seed"], j["seed"]);
        EXPECT_NE(j["correct"].get<bool>(), j["failure"].is_object());
    }
    EXPECT_EQ(count, outcome.records.size());

    const auto md = read_text_file((dir / "report.md").string());
    EXPECT_NE(md.find("1.00 (1)"), std::string::npos);
    EXPECT_NE(md.find("ZSP"), std::string::npos);
}

TEST(Benchmark, FscoreTableShape) {
    std::vector<MetricReport> reports(2);
    reports[0].model = "GPT-4";
    reports[0].method = MethodKind::Bdt;
    reports[0].mean_macro_f1 = 1.0;
    reports[1].model = "GPT-4";
    reports[1].method = MethodKind::Zsp;
    reports[1].mean_macro_f1 = 0.47;
    rank_reports(reports);
    const auto table = render_fscore_table(reports);
    EXPECT_NE(table.find("GPT-4"), std::string::npos);
    EXPECT_NE(table.find("1.00 (1)"), std::string::npos);
    EXPECT_NE(table.find("0.47"), std::string::npos);
    EXPECT_EQ(table.find("0.47 ("), std::string::npos);
}

}  // namespace
}  // namespace cpg
