#include "calli/stroke_codec.hpp"

#include <algorithm>
#include <sstream>

#include "calli/common.hpp"

namespace calli {

namespace vocab {

int symbol_to_id(char c) {
    if (c >= '1' && c <= '5') return 3 + (c - '1');
    if (c >= 'a' && c <= 'z') return 8 + (c - 'a');
    throw ValueError(std::string("symbol not in vocabulary: '") + c + "'");
}

char id_to_symbol(int id) {
    if (id >= 3 && id <= 7) return static_cast<char>('1' + (id - 3));
    if (id >= 8 && id <= 33) return static_cast<char>('a' + (id - 8));
    throw ValueError("token id " + std::to_string(id) + " has no symbol");
}

}  // namespace vocab

namespace {

void validate_entry(const StrokeCode& e, const std::string& where) {
    if (e.stroke_digits.empty())
        throw ParseError(where + ": empty stroke sequence");
    for (char c : e.stroke_digits)
        if (c < '1' || c > '5')
            throw ParseError(where + ": stroke digit out of range: '" + std::string(1, c) + "'");
    if (e.wubi.empty() || e.wubi.size() > 4)
        throw ParseError(where + ": Wubi code must be 1-4 letters, got \"" + e.wubi + "\"");
    for (char c : e.wubi)
        if (c < 'a' || c > 'z')
            throw ParseError(where + ": Wubi letter out of range: '" + std::string(1, c) + "'");
    if (static_cast<int>(e.combined.size()) + 2 > kMaxTokenLen)
        throw ParseError(where + ": combined code exceeds " +
                         std::to_string(kMaxTokenLen - 2) + " symbols");
}

}  // namespace

StrokeDictionary StrokeDictionary::load(const std::filesystem::path& path, bool fold_other) {
    const std::string text = read_text_file(path);
    std::istringstream in(text);
    std::vector<StrokeCode> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split(line, '\t');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 3)
            throw ParseError(where + ": expected `char<TAB>strokes<TAB>wubi`");
        const std::u32string ch = utf8_decode(fields[0]);
        if (ch.size() != 1)
            throw ParseError(where + ": first field must be a single character");
        StrokeCode e;
        e.character = ch[0];
        e.stroke_digits = fields[1];
        if (fold_other) {
            // Stroke classes beyond the five basic ones fold into class 5.
            for (char& c : e.stroke_digits)
                if (c >= '6' && c <= '9') c = '5';
        }
        e.wubi = fields[2];
        e.combined = e.stroke_digits + e.wubi;
        validate_entry(e, where);
        entries.push_back(std::move(e));
    }
    return from_entries(std::move(entries));
}

StrokeDictionary StrokeDictionary::from_entries(std::vector<StrokeCode> entries) {
    StrokeDictionary d;
    for (auto& e : entries) {
        if (e.combined.empty()) e.combined = e.stroke_digits + e.wubi;
        validate_entry(e, "entry U+" + std::to_string(static_cast<std::uint32_t>(e.character)));
        if (d.index_.count(e.character))
            throw ParseError("duplicate dictionary entry for " + utf8_encode(e.character));
        d.index_[e.character] = d.entries_.size();
        d.entries_.push_back(std::move(e));
    }
    return d;
}

const StrokeCode& StrokeDictionary::at(char32_t c) const {
    const auto it = index_.find(c);
    if (it == index_.end())
        throw UnknownLabelError("character not in stroke dictionary: " + utf8_encode(c));
    return entries_[it->second];
}

std::string StrokeDictionary::to_tsv() const {
    std::vector<const StrokeCode*> sorted;
    sorted.reserve(entries_.size());
    for (const auto& e : entries_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(),
              [](const StrokeCode* a, const StrokeCode* b) { return a->character < b->character; });
    std::string out;
    for (const auto* e : sorted) {
        out += utf8_encode(e->character);
        out += '\t';
        out += e->stroke_digits;
        out += '\t';
        out += e->wubi;
        out += '\n';
    }
    return out;
}

StrokeCode encode_character(char32_t c, const StrokeDictionary& db) {
    return db.at(c);
}

std::vector<int> tokenize(const std::string& combined) {
    if (static_cast<int>(combined.size()) + 2 > kMaxTokenLen)
        throw ValueError("code too long to tokenize: " + std::to_string(combined.size()) + " symbols");
    std::vector<int> ids;
    ids.reserve(combined.size() + 2);
    ids.push_back(vocab::kBos);
    for (char c : combined) ids.push_back(vocab::symbol_to_id(c));
    ids.push_back(vocab::kEos);
    return ids;
}

std::vector<int> tokenize(const StrokeCode& code) {
    return tokenize(code.combined);
}

std::string detokenize(const std::vector<int>& ids) {
    if (ids.size() < 2 || ids.front() != vocab::kBos || ids.back() != vocab::kEos)
        throw ValueError("malformed token sequence: must be [BOS] ... [EOS]");
    std::string out;
    out.reserve(ids.size() - 2);
    for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 3 || id > 33)
            throw ValueError("malformed token sequence: interior id " + std::to_string(id));
        out.push_back(vocab::id_to_symbol(id));
    }
    return out;
}

}  // namespace calli
