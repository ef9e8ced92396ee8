#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cpg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Directory holding the shipped guideline, bindings, templates and corpus.
/// CPGLLM_DATA_DIR overrides the build-time default.
std::string default_data_dir();

}  // namespace cpg::cli
