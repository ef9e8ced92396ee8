#include "cpgllm/evaluation.hpp"
#include "cpgllm/guideline.hpp"
#include "cpgllm/prompt.hpp"
#include "cpgllm/strategies.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>

namespace {

using namespace cpg;

std::string data(const std::string& name) { return std::string(CPGLLM_BENCH_DATA_DIR) + "/" + name; }

struct Canonical {
    GuidelineTree tree = load_guideline(data("guideline.json"));
    PredicateBindings bindings = load_bindings(data("bindings.json"));
    TemplateSet templates = load_templates(data("templates/canonical.json"), true);
    Corpus corpus = load_corpus(data("corpus.jsonl"), leaf_labels(tree), true);
};

const Canonical& canonical() {
    static const Canonical c;
    return c;
}

void BM_EvaluateFacts(benchmark::State& state) {
    const auto& c = canonical();
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& facts = *c.corpus.cases[i++ % c.corpus.cases.size()].facts;
        benchmark::DoNotOptimize(evaluate_facts(c.tree, c.bindings, facts));
    }
}
BENCHMARK(BM_EvaluateFacts);

void BM_EnumeratePaths(benchmark::State& state) {
    const auto& c = canonical();
    for (auto _ : state) benchmark::DoNotOptimize(enumerate_paths(c.tree));
}
BENCHMARK(BM_EnumeratePaths);

void BM_RunBdtTruthful(benchmark::State& state) {
    const auto& c = canonical();
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& pc = c.corpus.cases[i++ % c.corpus.cases.size()];
        TruthfulSimBackend backend(c.bindings, *pc.facts);
        benchmark::DoNotOptimize(run_bdt(c.tree, pc.description, c.templates, backend));
    }
}
BENCHMARK(BM_RunBdtTruthful);

void BM_RenderCotPrompt(benchmark::State& state) {
    const auto& c = canonical();
    for (auto _ : state)
        benchmark::DoNotOptimize(render_cot_prompt(c.templates, c.corpus.cases[0].description, c.tree));
}
BENCHMARK(BM_RenderCotPrompt);

void BM_CanonicalizeAnswer(benchmark::State& state) {
    const auto leaves = canonical().tree.leaf_list();
    const std::string text =
        "Based on the eGFR of 48, the patient should receive Nirmatrelvir 150 mg with Ritonavir 100 mg twice daily.";
    for (auto _ : state) benchmark::DoNotOptimize(canonicalize_answer(text, leaves));
}
BENCHMARK(BM_CanonicalizeAnswer);

void BM_GwetAc1(benchmark::State& state) {
    std::mt19937 rng(9631);
    std::vector<int> a(static_cast<std::size_t>(state.range(0)));
    std::vector<int> b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<int>(rng() % 3);
        b[i] = rng() % 4 == 0 ? static_cast<int>(rng() % 3) : a[i];
    }
    for (auto _ : state) benchmark::DoNotOptimize(gwet_ac1(a, b, 3));
}
BENCHMARK(BM_GwetAc1)->Arg(39)->Arg(1000)->Arg(100000);

void BM_TruthfulBenchmark(benchmark::State& state) {
    const auto& c = canonical();
    RunConfig config;
    config.backend.kind = BackendKind::TruthfulSim;
    config.parallelism = static_cast<int>(state.range(0));
    BenchmarkContext context;
    context.bindings = &c.bindings;
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(c.corpus, config, c.tree, c.templates, context));
}
BENCHMARK(BM_TruthfulBenchmark)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
