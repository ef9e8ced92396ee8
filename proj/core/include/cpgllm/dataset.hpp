#pragma once

#include "cpgllm/guideline.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpg {

enum class Difficulty { Easy, Medium, Hard };

/// "easy", "medium", "hard".
std::string_view to_string(Difficulty d) noexcept;
std::optional<Difficulty> difficulty_from_string(std::string_view name);

struct PatientCase {
    std::string id;
    std::string description;
    std::string gold_label;
    Difficulty difficulty = Difficulty::Easy;
    std::optional<StructuredPatientFacts> facts;
};

struct Corpus {
    std::vector<PatientCase> cases;
    std::string source_path;
};

inline constexpr std::size_t kCanonicalCorpusSize = 39;
inline constexpr std::size_t kCanonicalCasesPerDifficulty = 13;

class CorpusError : public std::runtime_error {
public:
    CorpusError(const std::string& message, std::size_t line = 0);
    /// 1-based line of the offending record, 0 when not line-specific.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UnknownLabelError : public CorpusError {
public:
    UnknownLabelError(const std::string& label, std::size_t line);
};

class CorpusShapeError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

/// JSON lines; blank lines are skipped. Every gold label must be one of
/// `labels`. With `canonical` set the corpus must hold 39 cases, 13 per
/// difficulty.
Corpus parse_corpus(std::string_view content, std::span<const std::string> labels, bool canonical = false);
Corpus load_corpus(const std::string& path, std::span<const std::string> labels, bool canonical = false);

/// Leaf labels of a tree, in leaf-id order.
std::vector<std::string> leaf_labels(const GuidelineTree& tree);

Corpus stratify(const Corpus& corpus, Difficulty difficulty);

const PatientCase* find_case(const Corpus& corpus, std::string_view id);

}  // namespace cpg
