#include "cpgllm/dataset.hpp"

#include "cpgllm/io.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

namespace cpg {

using nlohmann::json;

std::string_view to_string(Difficulty d) noexcept {
    switch (d) {
        case Difficulty::Easy: return "easy";
        case Difficulty::Medium: return "medium";
        case Difficulty::Hard: return "hard";
    }
    return "easy";
}

std::optional<Difficulty> difficulty_from_string(std::string_view name) {
    for (Difficulty d : {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard})
        if (name == to_string(d)) return d;
    return std::nullopt;
}

CorpusError::CorpusError(const std::string& message, std::size_t line)
    : std::runtime_error(line ? "corpus line " + std::to_string(line) + ": " + message : "corpus: " + message),
      line_(line) {}

UnknownLabelError::UnknownLabelError(const std::string& label, std::size_t line)
    : CorpusError("unknown gold label \"" + label + "\"", line) {}

namespace {

std::string text_field(const json& record, const char* key, std::size_t line) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) throw CorpusError(std::string("\"") + key + "\" must be a string", line);
    auto value = it->get<std::string>();
    if (value.empty()) throw CorpusError(std::string("\"") + key + "\" must not be empty", line);
    return value;
}

PatientCase parse_case(const json& record, std::span<const std::string> labels, std::size_t line) {
    if (!record.is_object()) throw CorpusError("expected a JSON object", line);
    for (const auto& [key, value] : record.items()) {
        if (key != "id" && key != "description" && key != "gold_label" && key != "difficulty" && key != "facts")
            throw CorpusError("unknown field \"" + key + "\"", line);
    }
    PatientCase c;
    c.id = text_field(record, "id", line);
    c.description = text_field(record, "description", line);
    c.gold_label = text_field(record, "gold_label", line);
    if (std::find(labels.begin(), labels.end(), c.gold_label) == labels.end())
        throw UnknownLabelError(c.gold_label, line);
    const auto difficulty = difficulty_from_string(text_field(record, "difficulty", line));
    if (!difficulty) throw CorpusError("difficulty must be easy, medium or hard", line);
    c.difficulty = *difficulty;
    if (auto it = record.find("facts"); it != record.end() && !it->is_null()) {
        try {
            c.facts = facts_from_json(*it);
        } catch (const std::exception& e) {
            throw CorpusError(std::string("facts: ") + e.what(), line);
        }
    }
    return c;
}

}  // namespace

Corpus parse_corpus(std::string_view content, std::span<const std::string> labels, bool canonical) {
    Corpus corpus;
    std::set<std::string> ids;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
        auto end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        const auto line = content.substr(start, end - start);
        ++line_no;
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw CorpusError(e.what(), line_no);
        }
        auto c = parse_case(record, labels, line_no);
        if (!ids.insert(c.id).second) throw CorpusError("duplicate case id \"" + c.id + "\"", line_no);
        corpus.cases.push_back(std::move(c));
    }
    if (canonical) {
        if (corpus.cases.size() != kCanonicalCorpusSize)
            throw CorpusShapeError("canonical corpus needs " + std::to_string(kCanonicalCorpusSize) + " cases, found " +
                                   std::to_string(corpus.cases.size()));
        for (Difficulty d : {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard}) {
            const auto n = static_cast<std::size_t>(std::count_if(
                corpus.cases.begin(), corpus.cases.end(), [d](const PatientCase& c) { return c.difficulty == d; }));
            if (n != kCanonicalCasesPerDifficulty)
                throw CorpusShapeError("canonical corpus needs 13 " + std::string(to_string(d)) + " cases, found " +
                                       std::to_string(n));
        }
    }
    return corpus;
}

Corpus load_corpus(const std::string& path, std::span<const std::string> labels, bool canonical) {
    auto corpus = parse_corpus(read_text_file(path), labels, canonical);
    corpus.source_path = path;
    return corpus;
}

std::vector<std::string> leaf_labels(const GuidelineTree& tree) {
    std::vector<std::string> out;
    for (const auto& leaf : tree.leaf_list()) out.push_back(leaf.label);
    return out;
}

Corpus stratify(const Corpus& corpus, Difficulty difficulty) {
    Corpus out;
    out.source_path = corpus.source_path;
    std::copy_if(corpus.cases.begin(), corpus.cases.end(), std::back_inserter(out.cases),
                 [difficulty](const PatientCase& c) { return c.difficulty == difficulty; });
    return out;
}

const PatientCase* find_case(const Corpus& corpus, std::string_view id) {
    for (const auto& c : corpus.cases)
        if (c.id == id) return &c;
    return nullptr;
}

}  // namespace cpg
