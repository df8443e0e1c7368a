#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "calli/image.hpp"
#include "calli/vector_font.hpp"

namespace calli {

enum class Style { Regular, SemiCursive, Clerical };
enum class Source { Scanned, FontRendered };
enum class SplitTag { Pretrain, FinetuneTrain, FinetuneTest };

std::string to_string(Style s);
std::string to_string(SplitTag t);
Style style_from_string(const std::string& s);
SplitTag split_from_string(const std::string& s);

// Single-channel character image in the model range [-1, 1]; ink is bright.
struct GlyphImage {
    std::vector<double> pixels;  // resolution * resolution, row-major
    int resolution = 0;
    char32_t label = 0;
    Style style = Style::Regular;
    Source source = Source::FontRendered;

    void validate() const;  // finite, in range, square at `resolution`
};

struct FontRef {
    std::filesystem::path font_file_path;
    bool holdout_flag = false;
};

// Deterministic, centered rendering of one character. Errors if the font
// lacks the codepoint.
GlyphImage render_glyph(char32_t label, const VectorFont& font, int resolution,
                        Style style = Style::Regular);
GlyphImage render_glyph(char32_t label, const FontRef& font, int resolution,
                        Style style = Style::Regular);

struct ManifestRecord {
    std::string image_path;
    char32_t label = 0;
    Style style = Style::Regular;
    SplitTag split = SplitTag::Pretrain;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::array<std::size_t, 3> style_counts{};  // indexed by Style

    static Manifest from_records(std::vector<ManifestRecord> records);

    std::size_t count(Style s) const { return style_counts[static_cast<std::size_t>(s)]; }
    std::size_t size() const { return records.size(); }

    // TSV, one record per line: image_path<TAB>label<TAB>style<TAB>split_tag
    std::string to_tsv() const;
    static Manifest from_tsv(const std::string& text, const std::string& origin = "<memory>");
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);
};

// Validates that every referenced file exists under image_dir (the error
// lists all missing paths), then assembles records sorted by image_path.
Manifest build_manifest(const std::filesystem::path& image_dir,
                        const std::vector<ManifestRecord>& label_map);

// Deterministic seeded partition into (train, test); records keep their
// relative order, split tags are rewritten to finetune-train/-test.
std::pair<Manifest, Manifest> split_finetune(const Manifest& manifest, std::size_t train_count,
                                             std::uint64_t seed);

// Reads a corpus PNG back into the model range and checks the invariants.
GlyphImage load_glyph_image(const std::filesystem::path& image_path, const ManifestRecord& rec,
                            int expected_resolution);

// Renders every label with one font and writes PNGs plus a manifest into
// out_dir. Refuses holdout fonts for trainable splits. Returns the manifest.
Manifest render_corpus(const std::vector<char32_t>& labels, const FontRef& font, int resolution,
                       Style style, SplitTag split, const std::filesystem::path& out_dir,
                       bool append_manifest = false);

}  // namespace calli
