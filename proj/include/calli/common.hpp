#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace calli {

// Error categories. The CLI maps any of these to exit code 1; argument
// parsing problems map to exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct UnknownLabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- UTF-8 <-> codepoints -------------------------------------------------

std::u32string utf8_decode(const std::string& s);
std::string utf8_encode(char32_t cp);
std::string utf8_encode(const std::u32string& s);

// --- files ------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);

// Writes via a sibling temp file and renames into place, so a failed write
// never leaves a partial file at `path`.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);
void atomic_write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Splits on a single delimiter, keeping empty fields.
std::vector<std::string> split(const std::string& line, char delim);

}  // namespace calli
