#pragma once

#include <stdexcept>
#include <string>

namespace cpg {

class FileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace cpg
