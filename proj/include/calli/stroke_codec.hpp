#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace calli {

// Combined structural code for one character: stroke-class digits followed
// by the Wubi letters, e.g. "3212212511" + "wajg" -> "3212212511wajg".
struct StrokeCode {
    char32_t character = 0;
    std::string stroke_digits;  // over {1..5}
    std::string wubi;           // over {a..z}, 1-4 letters
    std::string combined;       // stroke_digits + wubi
};

// Fixed token table shared by the codec and the sequence encoder.
//   [PAD]=0  [BOS]=1  [EOS]=2  '1'..'5'=3..7  'a'..'z'=8..33
namespace vocab {
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kSize = 34;

int symbol_to_id(char c);   // throws ValueError on unknown symbol
char id_to_symbol(int id);  // throws ValueError outside [3, 33]
}  // namespace vocab

// Longest sequences accepted at dictionary load: |combined| + BOS + EOS.
constexpr int kMaxTokenLen = 64;

class StrokeDictionary {
public:
    // File format: UTF-8 lines `char<TAB>stroke_digits<TAB>wubi`.
    // Blank lines and lines starting with '#' are skipped. Stroke symbols
    // outside 1..5 fold into class 5 when fold_other is set (the default),
    // otherwise they are rejected.
    static StrokeDictionary load(const std::filesystem::path& path, bool fold_other = true);
    static StrokeDictionary from_entries(std::vector<StrokeCode> entries);

    bool contains(char32_t c) const { return index_.count(c) != 0; }
    const StrokeCode& at(char32_t c) const;  // throws UnknownLabelError
    const std::vector<StrokeCode>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    // Canonical serialization: entries sorted by codepoint, TSV lines.
    std::string to_tsv() const;

private:
    std::vector<StrokeCode> entries_;
    std::map<char32_t, std::size_t> index_;
};

StrokeCode encode_character(char32_t c, const StrokeDictionary& db);

std::vector<int> tokenize(const StrokeCode& code);
std::vector<int> tokenize(const std::string& combined);

// Inverse of tokenize: expects [BOS] ... [EOS] with interior ids in [3, 33].
std::string detokenize(const std::vector<int>& ids);

}  // namespace calli
