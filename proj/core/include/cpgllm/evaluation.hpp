#pragma once

#include "cpgllm/dataset.hpp"
#include "cpgllm/guideline.hpp"
#include "cpgllm/llm_backend.hpp"
#include "cpgllm/prompt.hpp"
#include "cpgllm/strategies.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cpg {

inline constexpr std::array<std::int64_t, 4> kCanonicalSeeds{9631, 4603, 6367, 4057};

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- benchmark ------------------------------------------------------------

struct RunConfig {
    std::vector<std::int64_t> seeds{kCanonicalSeeds.begin(), kCanonicalSeeds.end()};
    std::vector<MethodKind> methods{MethodKind::Bdt};
    BackendConfig backend;
    int parallelism = 4;
    RenderOptions render;
};

/// Throws EvaluationError on empty/duplicate seeds, no methods or bad parallelism.
void validate_run_config(const RunConfig& config);

/// Name used for the model column of reports: the model id, or the backend
/// kind when no model id is configured.
std::string model_label(const BackendConfig& config);

struct PredictionRecord {
    std::string case_id;
    std::int64_t seed = 0;
    MethodKind method = MethodKind::Bdt;
    std::optional<std::string> predicted_label;
    std::optional<std::string> predicted_leaf_id;
    std::optional<std::string> failure_kind;
    std::string failure_message;
    std::string gold_label;
    Difficulty difficulty = Difficulty::Easy;
    std::string trace_ref;
    RecommendationTrace trace;

    bool correct() const { return predicted_label && *predicted_label == gold_label; }
};

nlohmann::json record_to_json(const PredictionRecord& record);

/// What the benchmark needs besides the config to build backends.
struct BenchmarkContext {
    const PredicateBindings* bindings = nullptr;
    std::vector<ScriptedRule> script;
    std::shared_ptr<HttpTransport> transport;
    std::shared_ptr<TranscriptLog> transcript;
};

/// Runs every (method, seed, case) triple. The backend configuration is
/// checked before any call; errors inside a triple become failure markers.
/// Records come back in (method, seed, case) order whatever the parallelism.
std::vector<PredictionRecord> run_benchmark(const Corpus& corpus, const RunConfig& config, const GuidelineTree& tree,
                                            const TemplateSet& templates, const BenchmarkContext& context);

// ---- metrics --------------------------------------------------------------

struct ClassMetrics {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct SeedScore {
    std::int64_t seed = 0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
};

/// Sentinel column of the confusion matrix for failed predictions.
inline constexpr std::string_view kFailureColumn = "(failure)";

struct MetricReport {
    std::string model;
    MethodKind method = MethodKind::Bdt;
    std::vector<SeedScore> per_seed;
    double mean_macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;  // pooled over seeds
    double accuracy = 0.0;                // pooled over seeds
    std::size_t records = 0;
    std::size_t failures = 0;
    std::vector<std::string> labels;                 // confusion rows (gold)
    std::vector<std::vector<std::size_t>> confusion;  // labels.size() + 1 columns
    bool selected = false;
    std::optional<int> rank;
    bool tied = false;
};

/// Macro-F1 over the classes present in `gold`; `predicted` entries that are
/// empty count as wrong.
double macro_f1(std::span<const std::string> gold, std::span<const std::optional<std::string>> predicted);

/// Records must share one method. `labels` is the label universe used for
/// the per-class table and the confusion matrix.
MetricReport compute_metrics(std::span<const PredictionRecord> records, std::span<const std::string> labels,
                             const std::string& model = {});

nlohmann::json metric_report_to_json(const MetricReport& report);

inline constexpr double kSelectionThreshold = 0.5;

struct ScoreEntry {
    std::string model;
    std::string method;
    double score = 0.0;
};

struct RankedEntry {
    ScoreEntry entry;
    int rank = 0;
    bool tied = false;
};

/// Keeps scores above 0.5, best first, ranked 1..k. Equal scores are ordered
/// by (model, method) and flagged as tied.
std::vector<RankedEntry> select_methods(std::span<const ScoreEntry> scores);

/// Sets selected/rank/tied on each report from select_methods.
void rank_reports(std::span<MetricReport> reports);

// ---- agreement ------------------------------------------------------------

/// Two-rater AC1 over categories 0..categories-1.
double gwet_ac1(std::span<const int> ratings_a, std::span<const int> ratings_b, int categories);

enum class AgreementBand { Poor, Slight, Fair, Moderate, Substantial, AlmostPerfect };

/// "Poor", "Slight", "Fair", "Moderate", "Substantial", "Almost Perfect".
std::string_view to_string(AgreementBand band) noexcept;

/// Upper-inclusive bands; throws std::invalid_argument outside [-1, 1].
AgreementBand interpret_landis_koch(double score);

enum class AnnotationCategory { IncorrectMedicalContent, OmissionOfContent, HarmfulContent };

inline constexpr std::array<AnnotationCategory, 3> kAnnotationCategories{
    AnnotationCategory::IncorrectMedicalContent, AnnotationCategory::OmissionOfContent,
    AnnotationCategory::HarmfulContent};

/// "incorrect_medical_content", "omission_of_content", "harmful_content".
std::string_view to_string(AnnotationCategory c) noexcept;
std::string_view display_name(AnnotationCategory c) noexcept;
std::optional<AnnotationCategory> annotation_category_from_string(std::string_view name);

/// Ratings run 0..2: 2 means no issue, 0 the most severe one.
inline constexpr int kRatingLevels = 3;

struct AnnotationRecord {
    std::string response_id;
    std::string rater_id;
    AnnotationCategory category = AnnotationCategory::IncorrectMedicalContent;
    int rating = 2;
};

/// Header `response_id,rater_id,category,rating`, then one record per row.
std::vector<AnnotationRecord> parse_annotations_csv(std::string_view content);

/// `response_id,group` rows mapping responses to a reporting group.
std::map<std::string, std::string> parse_groups_csv(std::string_view content);

struct CategoryAgreement {
    AnnotationCategory category = AnnotationCategory::IncorrectMedicalContent;
    double ac1 = 0.0;
    AgreementBand band = AgreementBand::Poor;
    std::size_t items = 0;
};

struct AgreementReport {
    std::vector<CategoryAgreement> categories;
    std::array<std::string, 2> raters;
    std::size_t item_count = 0;
};

/// Pairs the two raters' ratings by (response, category). Requires exactly
/// two raters, each rating every item the other rated.
AgreementReport agreement_report(std::span<const AnnotationRecord> records);

struct HumanEvalSummary {
    std::string group;
    std::array<double, 3> category_means{};
    double overall = 0.0;
    std::size_t records = 0;
};

/// Per-group category means and their mean. Without a mapping every record
/// falls into group "all"; a record whose response has no group is an error.
std::vector<HumanEvalSummary> aggregate_human_eval(std::span<const AnnotationRecord> records,
                                                   const std::map<std::string, std::string>& groups = {});

/// Mean of three category means.
double overall_score(const std::array<double, 3>& category_means);

/// Half-up rounding to two decimals, e.g. 1.857 -> "1.86".
std::string format_2dp(double value);

// ---- outputs --------------------------------------------------------------

struct BenchmarkOutcome {
    std::vector<PredictionRecord> records;
    std::vector<MetricReport> reports;  // one per method
};

/// run_benchmark + compute_metrics per method + rank_reports.
BenchmarkOutcome evaluate(const Corpus& corpus, const RunConfig& config, const GuidelineTree& tree,
                          const TemplateSet& templates, const BenchmarkContext& context);

nlohmann::json outcome_to_json(const BenchmarkOutcome& outcome, const RunConfig& config);

/// Table shaped like the published F-score table: one row per method, one
/// column per model, rank in parentheses for selected entries.
std::string render_fscore_table(std::span<const MetricReport> reports);

/// Category rows plus an overall row, one column per group.
std::string render_human_eval_table(std::span<const HumanEvalSummary> summaries);

/// Writes report.json, report.md, predictions.jsonl and traces.jsonl under `dir`.
void write_benchmark_outputs(const std::string& dir, const BenchmarkOutcome& outcome, const RunConfig& config);

}  // namespace cpg
