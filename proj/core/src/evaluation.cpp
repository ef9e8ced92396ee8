#include "cpgllm/evaluation.hpp"

#include "cpgllm/io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

// ---- benchmark ------------------------------------------------------------

void validate_run_config(const RunConfig& config) {
    if (config.seeds.empty()) throw EvaluationError("at least one seed is required");
    std::set<std::int64_t> distinct(config.seeds.begin(), config.seeds.end());
    if (distinct.size() != config.seeds.size()) throw EvaluationError("seeds must be distinct");
    if (config.methods.empty()) throw EvaluationError("at least one method is required");
    std::set<MethodKind> methods(config.methods.begin(), config.methods.end());
    if (methods.size() != config.methods.size()) throw EvaluationError("methods must be distinct");
    if (config.parallelism < 1 || config.parallelism > 64)
        throw EvaluationError("parallelism must be between 1 and 64");
}

std::string model_label(const BackendConfig& config) {
    return config.model_id.empty() ? std::string(to_string(config.kind)) : config.model_id;
}

json record_to_json(const PredictionRecord& r) {
    return json{
        {"case_id", r.case_id},
        {"seed", r.seed},
        {"method", to_string(r.method)},
        {"difficulty", to_string(r.difficulty)},
        {"gold_label", r.gold_label},
        {"predicted_label", r.predicted_label ? json(*r.predicted_label) : json(nullptr)},
        {"predicted_leaf_id", r.predicted_leaf_id ? json(*r.predicted_leaf_id) : json(nullptr)},
        {"failure", r.failure_kind ? json{{"kind", *r.failure_kind}, {"message", r.failure_message}} : json(nullptr)},
        {"correct", r.correct()},
        {"trace_ref", r.trace_ref},
    };
}

namespace {

struct Triple {
    MethodKind method;
    std::int64_t seed;
    const PatientCase* patient;
};


PredictionRecord run_triple(const Triple& t, const RunConfig& config, const GuidelineTree& tree,
                            const TemplateSet& templates, const BenchmarkContext& context, std::string trace_ref) {
    PredictionRecord record;
    record.trace_ref = std::move(trace_ref);
    record.case_id = t.patient->id;
    record.seed = t.seed;
    record.method = t.method;
    record.gold_label = t.patient->gold_label;
    record.difficulty = t.patient->difficulty;
    record.trace.method = t.method;
    record.trace.seed = t.seed;

    auto fail = [&record](std::string kind, std::string message) {
        record.failure_kind = std::move(kind);
        record.failure_message = std::move(message);
    };
    try {
        BackendConfig backend_config = config.backend;
        backend_config.seed = t.seed;
        BackendContext backend_context{context.bindings, t.patient->facts, context.script, context.transport,
                                       context.transcript};
        auto backend = make_backend(backend_config, backend_context);
        RunOptions options{t.seed, t.patient->id, config.render};
        record.trace = run_method(t.method, tree, t.patient->description, templates, *backend, options);
        record.predicted_label = record.trace.final_leaf->label;
        record.predicted_leaf_id = record.trace.final_leaf->id;
    } catch (const StrategyError& e) {
        record.trace = e.trace();
        fail(std::string(e.kind()), e.what());
    } catch (const BackendConfigError& e) {
        fail("backend_config", e.what());
    } catch (const BackendError& e) {
        fail("backend_failure", e.what());
    } catch (const PromptError& e) {
        fail("prompt_error", e.what());
    } catch (const std::exception& e) {
        fail("error", e.what());
    }
    return record;
}

}  // namespace

std::vector<PredictionRecord> run_benchmark(const Corpus& corpus, const RunConfig& config, const GuidelineTree& tree,
                                            const TemplateSet& templates, const BenchmarkContext& context) {
    validate_run_config(config);
    validate_config(config.backend);
    if (config.backend.kind == BackendKind::TruthfulSim && !context.bindings)
        throw BackendConfigError("TRUTHFUL_SIM needs predicate bindings");
    if (config.backend.kind == BackendKind::HttpChat) {
        BackendContext probe{context.bindings, std::nullopt, {}, context.transport, nullptr};
        make_backend(config.backend, probe);
    }

    std::vector<Triple> triples;
    for (MethodKind method : config.methods)
        for (std::int64_t seed : config.seeds)
            for (const auto& patient : corpus.cases) triples.push_back({method, seed, &patient});

    std::vector<PredictionRecord> records(triples.size());
    for (std::size_t i = 0; i < records.size(); ++i) records[i].trace_ref = "traces.jsonl:" + std::to_string(i + 1);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < triples.size(); i = next++)
            records[i] = run_triple(triples[i], config, tree, templates, context, records[i].trace_ref);
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.parallelism), triples.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    }
    return records;
}

// ---- metrics --------------------------------------------------------------

namespace {

struct Counts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

double ratio(std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

ClassMetrics class_metrics(const std::string& label, const Counts& c) {
    ClassMetrics m;
    m.label = label;
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.support = c.tp + c.fn;
    return m;
}

std::map<std::string, Counts> count(std::span<const std::string> gold,
                                    std::span<const std::optional<std::string>> predicted) {
    std::map<std::string, Counts> counts;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const auto& p = predicted[i];
        if (p && *p == gold[i]) {
            ++counts[gold[i]].tp;
        } else {
            ++counts[gold[i]].fn;
            if (p) ++counts[*p].fp;
        }
    }
    return counts;
}

}  // namespace

double macro_f1(std::span<const std::string> gold, std::span<const std::optional<std::string>> predicted) {
    if (gold.size() != predicted.size()) throw EvaluationError("gold and predicted lengths differ");
    if (gold.empty()) throw EvaluationError("macro-F1 needs at least one prediction");
    const auto counts = count(gold, predicted);
    const std::set<std::string> classes(gold.begin(), gold.end());
    double sum = 0.0;
    for (const auto& label : classes) sum += class_metrics(label, counts.at(label)).f1;
    return sum / static_cast<double>(classes.size());
}

MetricReport compute_metrics(std::span<const PredictionRecord> records, std::span<const std::string> labels,
                             const std::string& model) {
    if (records.empty()) throw EvaluationError("no records to score");
    MetricReport report;
    report.model = model;
    report.method = records.front().method;
    for (const auto& r : records)
        if (r.method != report.method) throw EvaluationError("records mix several methods");

    std::vector<std::int64_t> seeds;
    for (const auto& r : records)
        if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);

    double sum = 0.0;
    for (std::int64_t seed : seeds) {
        std::vector<std::string> gold;
        std::vector<std::optional<std::string>> predicted;
        std::size_t correct = 0;
        for (const auto& r : records) {
            if (r.seed != seed) continue;
            gold.push_back(r.gold_label);
            predicted.push_back(r.predicted_label);
            correct += r.correct();
        }
        SeedScore s{seed, macro_f1(gold, predicted), ratio(correct, gold.size())};
        sum += s.macro_f1;
        report.per_seed.push_back(s);
    }
    report.mean_macro_f1 = sum / static_cast<double>(seeds.size());

    std::vector<std::string> gold;
    std::vector<std::optional<std::string>> predicted;
    std::size_t correct = 0;
    for (const auto& r : records) {
        gold.push_back(r.gold_label);
        predicted.push_back(r.predicted_label);
        correct += r.correct();
        report.failures += !r.predicted_label;
    }
    report.records = records.size();
    report.accuracy = ratio(correct, records.size());

    report.labels.assign(labels.begin(), labels.end());
    for (const auto& g : gold)
        if (std::find(report.labels.begin(), report.labels.end(), g) == report.labels.end())
            report.labels.push_back(g);
    const auto counts = count(gold, predicted);
    for (const auto& label : report.labels) {
        auto it = counts.find(label);
        report.per_class.push_back(class_metrics(label, it == counts.end() ? Counts{} : it->second));
    }

    auto index_of = [&](const std::string& label) {
        return static_cast<std::size_t>(std::find(report.labels.begin(), report.labels.end(), label) -
                                        report.labels.begin());
    };
    const std::size_t failure_col = report.labels.size();
    report.confusion.assign(report.labels.size(), std::vector<std::size_t>(failure_col + 1, 0));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        std::size_t col = failure_col;
        if (predicted[i]) {
            col = index_of(*predicted[i]);
            if (col == failure_col) continue;  // predicted label outside the universe
        }
        ++report.confusion[index_of(gold[i])][col];
    }
    report.selected = report.mean_macro_f1 > kSelectionThreshold;
    return report;
}

json metric_report_to_json(const MetricReport& report) {
    json seeds = json::array();
    for (const auto& s : report.per_seed) seeds.push_back({{"seed", s.seed}, {"macro_f1", s.macro_f1}, {"accuracy", s.accuracy}});
    json classes = json::array();
    for (const auto& c : report.per_class)
        classes.push_back(
            {{"label", c.label}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
    json columns = report.labels;
    columns.push_back(kFailureColumn);
    return json{
        {"model", report.model},
        {"method", to_string(report.method)},
        {"per_seed", std::move(seeds)},
        {"mean_macro_f1", report.mean_macro_f1},
        {"per_class", std::move(classes)},
        {"accuracy", report.accuracy},
        {"records", report.records},
        {"failures", report.failures},
        {"confusion", {{"rows", report.labels}, {"columns", std::move(columns)}, {"counts", report.confusion}}},
        {"selected", report.selected},
        {"rank", report.rank ? json(*report.rank) : json(nullptr)},
        {"tied", report.tied},
    };
}

std::vector<RankedEntry> select_methods(std::span<const ScoreEntry> scores) {
    std::vector<ScoreEntry> kept;
    for (const auto& s : scores)
        if (s.score > kSelectionThreshold) kept.push_back(s);
    std::sort(kept.begin(), kept.end(), [](const ScoreEntry& a, const ScoreEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.model != b.model) return a.model < b.model;
        return a.method < b.method;
    });
    std::vector<RankedEntry> out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const bool tied = (i > 0 && kept[i - 1].score == kept[i].score) ||
                          (i + 1 < kept.size() && kept[i + 1].score == kept[i].score);
        out.push_back({kept[i], static_cast<int>(i + 1), tied});
    }
    return out;
}

void rank_reports(std::span<MetricReport> reports) {
    std::vector<ScoreEntry> scores;
    for (const auto& r : reports) scores.push_back({r.model, std::string(to_string(r.method)), r.mean_macro_f1});
    const auto ranked = select_methods(scores);
    for (auto& r : reports) {
        r.selected = false;
        r.rank.reset();
        r.tied = false;
        for (const auto& e : ranked) {
            if (e.entry.model == r.model && e.entry.method == to_string(r.method)) {
                r.selected = true;
                r.rank = e.rank;
                r.tied = e.tied;
            }
        }
    }
}

// ---- agreement ------------------------------------------------------------

double gwet_ac1(std::span<const int> ratings_a, std::span<const int> ratings_b, int categories) {
    if (ratings_a.size() != ratings_b.size()) throw std::invalid_argument("raters rated different numbers of items");
    if (ratings_a.empty()) throw std::invalid_argument("AC1 needs at least one item");
    if (categories < 2) throw std::invalid_argument("AC1 needs at least two categories");
    const auto q = static_cast<std::size_t>(categories);
    std::vector<double> share(q, 0.0);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < ratings_a.size(); ++i) {
        for (int r : {ratings_a[i], ratings_b[i]}) {
            if (r < 0 || r >= categories)
                throw std::invalid_argument("rating " + std::to_string(r) + " outside 0.." +
                                            std::to_string(categories - 1));
            share[static_cast<std::size_t>(r)] += 1.0;
        }
        agree += ratings_a[i] == ratings_b[i];
    }
    const double n = static_cast<double>(ratings_a.size());
    const double pa = static_cast<double>(agree) / n;
    double pe = 0.0;
    for (double s : share) {
        const double pi = s / (2.0 * n);
        pe += pi * (1.0 - pi);
    }
    pe /= static_cast<double>(categories - 1);
    if (pe >= 1.0) throw std::domain_error("chance agreement is 1; AC1 is undefined");
    return (pa - pe) / (1.0 - pe);
}

std::string_view to_string(AgreementBand band) noexcept {
    switch (band) {
        case AgreementBand::Poor: return "Poor";
        case AgreementBand::Slight: return "Slight";
        case AgreementBand::Fair: return "Fair";
        case AgreementBand::Moderate: return "Moderate";
        case AgreementBand::Substantial: return "Substantial";
        case AgreementBand::AlmostPerfect: return "Almost Perfect";
    }
    return "Poor";
}

AgreementBand interpret_landis_koch(double score) {
    if (!(score >= -1.0 && score <= 1.0)) throw std::invalid_argument("agreement score must lie in [-1, 1]");
    if (score < 0.0) return AgreementBand::Poor;
    if (score <= 0.20) return AgreementBand::Slight;
    if (score <= 0.40) return AgreementBand::Fair;
    if (score <= 0.60) return AgreementBand::Moderate;
    if (score <= 0.80) return AgreementBand::Substantial;
    return AgreementBand::AlmostPerfect;
}

std::string_view to_string(AnnotationCategory c) noexcept {
    switch (c) {
        case AnnotationCategory::IncorrectMedicalContent: return "incorrect_medical_content";
        case AnnotationCategory::OmissionOfContent: return "omission_of_content";
        case AnnotationCategory::HarmfulContent: return "harmful_content";
    }
    return "incorrect_medical_content";
}

std::string_view display_name(AnnotationCategory c) noexcept {
    switch (c) {
        case AnnotationCategory::IncorrectMedicalContent: return "Incorrect medical content";
        case AnnotationCategory::OmissionOfContent: return "Omission of content";
        case AnnotationCategory::HarmfulContent: return "Harmful content";
    }
    return "Incorrect medical content";
}

std::optional<AnnotationCategory> annotation_category_from_string(std::string_view name) {
    std::string lower;
    for (char ch : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    for (AnnotationCategory c : kAnnotationCategories)
        if (lower == to_string(c)) return c;
    return std::nullopt;
}

namespace {

std::vector<std::vector<std::string>> parse_csv(std::string_view content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool row_has_data = false;
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (quoted) {
            if (c == '"' && i + 1 < content.size() && content[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            row_has_data = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            row_has_data = true;
        } else if (c == '\n') {
            if (row_has_data || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            row_has_data = false;
        } else if (c != '\r') {
            field += c;
            row_has_data = true;
        }
    }
    if (quoted) throw std::invalid_argument("csv: unterminated quoted field");
    if (row_has_data || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

void expect_header(const std::vector<std::string>& header, const std::vector<std::string>& expected) {
    if (header != expected) {
        std::string want;
        for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
        throw std::invalid_argument("csv: header must be " + want);
    }
}

}  // namespace

std::vector<AnnotationRecord> parse_annotations_csv(std::string_view content) {
    const auto rows = parse_csv(content);
    if (rows.empty()) throw std::invalid_argument("csv: missing header");
    expect_header(rows.front(), {"response_id", "rater_id", "category", "rating"});
    std::vector<AnnotationRecord> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::string where = "csv row " + std::to_string(i + 1) + ": ";
        if (row.size() != 4) throw std::invalid_argument(where + "expected 4 fields");
        AnnotationRecord r;
        r.response_id = row[0];
        r.rater_id = row[1];
        if (r.response_id.empty() || r.rater_id.empty()) throw std::invalid_argument(where + "empty id");
        const auto category = annotation_category_from_string(row[2]);
        if (!category) throw std::invalid_argument(where + "unknown category \"" + row[2] + "\"");
        r.category = *category;
        if (row[3].size() != 1 || row[3][0] < '0' || row[3][0] > '2')
            throw std::invalid_argument(where + "rating must be 0, 1 or 2");
        r.rating = row[3][0] - '0';
        out.push_back(std::move(r));
    }
    return out;
}

std::map<std::string, std::string> parse_groups_csv(std::string_view content) {
    const auto rows = parse_csv(content);
    if (rows.empty()) throw std::invalid_argument("csv: missing header");
    expect_header(rows.front(), {"response_id", "group"});
    std::map<std::string, std::string> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::string where = "csv row " + std::to_string(i + 1) + ": ";
        if (rows[i].size() != 2 || rows[i][0].empty() || rows[i][1].empty())
            throw std::invalid_argument(where + "expected response_id,group");
        if (!out.emplace(rows[i][0], rows[i][1]).second)
            throw std::invalid_argument(where + "duplicate response \"" + rows[i][0] + "\"");
    }
    return out;
}

AgreementReport agreement_report(std::span<const AnnotationRecord> records) {
    std::set<std::string> raters;
    for (const auto& r : records) raters.insert(r.rater_id);
    if (raters.size() != 2)
        throw std::invalid_argument("agreement needs exactly two raters, found " + std::to_string(raters.size()));
    AgreementReport report;
    report.raters = {*raters.begin(), *std::next(raters.begin())};

    using Key = std::pair<std::string, AnnotationCategory>;
    std::map<Key, std::array<std::optional<int>, 2>> items;
    for (const auto& r : records) {
        auto& slot = items[{r.response_id, r.category}][r.rater_id == report.raters[0] ? 0 : 1];
        if (slot)
            throw std::invalid_argument("rater " + r.rater_id + " rated response " + r.response_id + " / " +
                                        std::string(to_string(r.category)) + " twice");
        slot = r.rating;
    }
    std::set<std::string> responses;
    for (AnnotationCategory category : kAnnotationCategories) {
        std::vector<int> a;
        std::vector<int> b;
        for (const auto& [key, pair] : items) {
            if (key.second != category) continue;
            if (!pair[0] || !pair[1])
                throw std::invalid_argument("response " + key.first + " / " + std::string(to_string(category)) +
                                            " lacks a rating from rater " + report.raters[pair[0] ? 1 : 0]);
            a.push_back(*pair[0]);
            b.push_back(*pair[1]);
            responses.insert(key.first);
        }
        if (a.empty()) continue;
        const double ac1 = gwet_ac1(a, b, kRatingLevels);
        report.categories.push_back({category, ac1, interpret_landis_koch(std::clamp(ac1, -1.0, 1.0)), a.size()});
    }
    report.item_count = responses.size();
    return report;
}

double overall_score(const std::array<double, 3>& category_means) {
    return (category_means[0] + category_means[1] + category_means[2]) / 3.0;
}

std::vector<HumanEvalSummary> aggregate_human_eval(std::span<const AnnotationRecord> records,
                                                   const std::map<std::string, std::string>& groups) {
    if (records.empty()) throw std::invalid_argument("no annotation records");
    struct Sums {
        std::array<double, 3> sum{};
        std::array<std::size_t, 3> n{};
        std::size_t records = 0;
    };
    std::map<std::string, Sums> by_group;
    for (const auto& r : records) {
        if (r.rating < 0 || r.rating > 2) throw std::invalid_argument("rating must be 0, 1 or 2");
        std::string group = "all";
        if (!groups.empty()) {
            auto it = groups.find(r.response_id);
            if (it == groups.end()) throw std::invalid_argument("response " + r.response_id + " has no group");
            group = it->second;
        }
        auto& s = by_group[group];
        const auto c = static_cast<std::size_t>(r.category);
        s.sum[c] += r.rating;
        ++s.n[c];
        ++s.records;
    }
    std::vector<HumanEvalSummary> out;
    for (const auto& [group, s] : by_group) {
        HumanEvalSummary summary;
        summary.group = group;
        summary.records = s.records;
        for (std::size_t c = 0; c < 3; ++c) {
            if (s.n[c] == 0)
                throw std::invalid_argument("group " + group + " has no ratings for " +
                                            std::string(to_string(kAnnotationCategories[c])));
            summary.category_means[c] = s.sum[c] / static_cast<double>(s.n[c]);
        }
        summary.overall = overall_score(summary.category_means);
        out.push_back(summary);
    }
    return out;
}

std::string format_2dp(double value) {
    const double rounded = std::floor(value * 100.0 + 0.5 + 1e-9) / 100.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", rounded == 0.0 ? 0.0 : rounded);
    return buf;
}

// ---- outputs --------------------------------------------------------------

BenchmarkOutcome evaluate(const Corpus& corpus, const RunConfig& config, const GuidelineTree& tree,
                          const TemplateSet& templates, const BenchmarkContext& context) {
    BenchmarkOutcome outcome;
    outcome.records = run_benchmark(corpus, config, tree, templates, context);
    if (outcome.records.empty()) return outcome;
    const auto labels = leaf_labels(tree);
    const auto model = model_label(config.backend);
    for (MethodKind method : config.methods) {
        std::vector<PredictionRecord> subset;
        std::copy_if(outcome.records.begin(), outcome.records.end(), std::back_inserter(subset),
                     [method](const PredictionRecord& r) { return r.method == method; });
        outcome.reports.push_back(compute_metrics(subset, labels, model));
    }
    rank_reports(outcome.reports);
    return outcome;
}

json outcome_to_json(const BenchmarkOutcome& outcome, const RunConfig& config) {
    json reports = json::array();
    for (const auto& r : outcome.reports) reports.push_back(metric_report_to_json(r));
    json selection = json::array();
    std::vector<const MetricReport*> selected;
    for (const auto& r : outcome.reports)
        if (r.rank) selected.push_back(&r);
    std::sort(selected.begin(), selected.end(), [](auto* a, auto* b) { return *a->rank < *b->rank; });
    for (const auto* r : selected)
        selection.push_back({{"rank", *r->rank},
                             {"model", r->model},
                             {"method", to_string(r->method)},
                             {"mean_macro_f1", r->mean_macro_f1},
                             {"tied", r->tied}});
    json methods = json::array();
    for (MethodKind m : config.methods) methods.push_back(to_string(m));
    std::size_t failures = 0;
    for (const auto& r : outcome.records) failures += !r.predicted_label;
    return json{
        {"model", model_label(config.backend)},
        {"backend", to_string(config.backend.kind)},
        {"seeds", config.seeds},
        {"methods", std::move(methods)},
        {"records", outcome.records.size()},
        {"failures", failures},
        {"reports", std::move(reports)},
        {"selection", std::move(selection)},
        {"canonicalization", {{"accept_score", kCanonicalAcceptScore}, {"margin", kCanonicalMargin}}},
        {"selection_threshold", kSelectionThreshold},
    };
}

std::string render_fscore_table(std::span<const MetricReport> reports) {
    std::vector<std::string> models;
    std::vector<MethodKind> methods;
    for (const auto& r : reports) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
    std::ostringstream out;
    out << "| Method |";
    for (const auto& m : models) out << ' ' << m << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < models.size(); ++i) out << "---|";
    out << '\n';
    for (MethodKind method : methods) {
        out << "| " << display_name(method) << " |";
        for (const auto& model : models) {
            auto it = std::find_if(reports.begin(), reports.end(),
                                   [&](const MetricReport& r) { return r.model == model && r.method == method; });
            if (it == reports.end()) {
                out << "  |";
                continue;
            }
            out << ' ' << format_2dp(it->mean_macro_f1);
            if (it->rank) out << " (" << *it->rank << ')';
            out << " |";
        }
        out << '\n';
    }
    return out.str();
}

std::string render_human_eval_table(std::span<const HumanEvalSummary> summaries) {
    std::ostringstream out;
    out << "| Category |";
    for (const auto& s : summaries) out << ' ' << s.group << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < summaries.size(); ++i) out << "---|";
    out << '\n';
    for (std::size_t c = 0; c < 3; ++c) {
        out << "| " << display_name(kAnnotationCategories[c]) << " |";
        for (const auto& s : summaries) out << ' ' << format_2dp(s.category_means[c]) << " |";
        out << '\n';
    }
    out << "| Overall |";
    for (const auto& s : summaries) out << ' ' << format_2dp(s.overall) << " |";
    out << '\n';
    return out.str();
}

void write_benchmark_outputs(const std::string& dir, const BenchmarkOutcome& outcome, const RunConfig& config) {
    const std::string base = dir.empty() ? std::string(".") : dir;
    write_text_file(base + "/report.json", outcome_to_json(outcome, config).dump(2) + "\n");

    std::ostringstream md;
    md << "# Benchmark report\n\n";
    md << "Backend: " << to_string(config.backend.kind) << ", model: " << model_label(config.backend) << "\n";
    md << "Seeds:";
    for (auto s : config.seeds) md << ' ' << s;
    md << "\n\n## Mean macro-F1\n\n" << render_fscore_table(outcome.reports);
    md << "\nSelected entries (mean macro-F1 above 0.5) carry their rank in parentheses.\n";
    for (const auto& r : outcome.reports) {
        md << "\n## " << display_name(r.method) << "\n\n";
        md << "| Seed | Macro-F1 | Accuracy |\n|---|---|---|\n";
        for (const auto& s : r.per_seed)
            md << "| " << s.seed << " | " << format_2dp(s.macro_f1) << " | " << format_2dp(s.accuracy) << " |\n";
        md << "\nFailures: " << r.failures << " of " << r.records << "\n";
    }
    write_text_file(base + "/report.md", md.str());

    std::string lines;
    for (const auto& r : outcome.records) lines += record_to_json(r).dump() + "\n";
    write_text_file(base + "/predictions.jsonl", lines);

    std::string traces;
    for (const auto& r : outcome.records)
        traces += json{{"case_id", r.case_id}, {"seed", r.seed}, {"method", to_string(r.method)},
                       {"trace", trace_to_json(r.trace)}}
                      .dump() +
                  "\n";
    write_text_file(base + "/traces.jsonl", traces);
}

}  // namespace cpg
