#include "calli/glyph_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "calli/common.hpp"
#include "calli/rng.hpp"

namespace calli {

std::string to_string(Style s) {
    switch (s) {
        case Style::Regular: return "regular";
        case Style::SemiCursive: return "semicursive";
        case Style::Clerical: return "clerical";
    }
    throw ValueError("bad style value");
}

std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::Pretrain: return "pretrain";
        case SplitTag::FinetuneTrain: return "finetune-train";
        case SplitTag::FinetuneTest: return "finetune-test";
    }
    throw ValueError("bad split tag value");
}

Style style_from_string(const std::string& s) {
    if (s == "regular") return Style::Regular;
    if (s == "semicursive") return Style::SemiCursive;
    if (s == "clerical") return Style::Clerical;
    throw ParseError("unknown style: \"" + s + "\"");
}

SplitTag split_from_string(const std::string& s) {
    if (s == "pretrain") return SplitTag::Pretrain;
    if (s == "finetune-train") return SplitTag::FinetuneTrain;
    if (s == "finetune-test") return SplitTag::FinetuneTest;
    throw ParseError("unknown split tag: \"" + s + "\"");
}

void GlyphImage::validate() const {
    if (resolution <= 0 ||
        pixels.size() != static_cast<std::size_t>(resolution) * resolution)
        throw ShapeError("glyph image is not square at its declared resolution");
    for (double v : pixels)
        if (!std::isfinite(v) || v < -1.0 || v > 1.0)
            throw ValueError("glyph pixel outside [-1, 1]");
}

GlyphImage render_glyph(char32_t label, const VectorFont& font, int resolution, Style style) {
    const Image raster = rasterize_glyph(font, label, resolution);
    GlyphImage g;
    g.pixels = to_signed_range(raster);
    g.resolution = resolution;
    g.label = label;
    g.style = style;
    g.source = Source::FontRendered;
    g.validate();
    return g;
}

GlyphImage render_glyph(char32_t label, const FontRef& font, int resolution, Style style) {
    return render_glyph(label, VectorFont::load(font.font_file_path), resolution, style);
}

Manifest Manifest::from_records(std::vector<ManifestRecord> records) {
    Manifest m;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.image_path).second)
            throw ValueError("duplicate image path in manifest: " + r.image_path);
        m.style_counts[static_cast<std::size_t>(r.style)] += 1;
    }
    m.records = std::move(records);
    return m;
}

std::string Manifest::to_tsv() const {
    std::string out;
    for (const auto& r : records) {
        out += r.image_path;
        out += '\t';
        out += utf8_encode(r.label);
        out += '\t';
        out += to_string(r.style);
        out += '\t';
        out += to_string(r.split);
        out += '\n';
    }
    return out;
}

Manifest Manifest::from_tsv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::vector<ManifestRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, '\t');
        const std::string where = origin + ":" + std::to_string(line_no);
        if (fields.size() != 4)
            throw ParseError(where + ": expected 4 tab-separated fields");
        const std::u32string label = utf8_decode(fields[1]);
        if (label.size() != 1)
            throw ParseError(where + ": label must be a single character");
        records.push_back({fields[0], label[0], style_from_string(fields[2]),
                           split_from_string(fields[3])});
    }
    return from_records(std::move(records));
}

void Manifest::save(const std::filesystem::path& path) const {
    atomic_write_file(path, to_tsv());
}

Manifest Manifest::load(const std::filesystem::path& path) {
    return from_tsv(read_text_file(path), path.string());
}

Manifest build_manifest(const std::filesystem::path& image_dir,
                        const std::vector<ManifestRecord>& label_map) {
    std::vector<std::string> missing;
    for (const auto& r : label_map)
        if (!std::filesystem::exists(image_dir / r.image_path)) missing.push_back(r.image_path);
    if (!missing.empty()) {
        std::string msg = "manifest references missing files:";
        for (const auto& p : missing) msg += "\n  " + p;
        throw IoError(msg);
    }
    std::vector<ManifestRecord> records = label_map;
    std::sort(records.begin(), records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return a.image_path < b.image_path;
              });
    return Manifest::from_records(std::move(records));
}

std::pair<Manifest, Manifest> split_finetune(const Manifest& manifest, std::size_t train_count,
                                             std::uint64_t seed) {
    const std::size_t n = manifest.size();
    if (train_count > n)
        throw ValueError("train_count " + std::to_string(train_count) + " exceeds manifest size " +
                         std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < train_count; ++i) in_train[order[i]] = true;

    std::vector<ManifestRecord> train, test;
    for (std::size_t i = 0; i < n; ++i) {
        ManifestRecord r = manifest.records[i];
        r.split = in_train[i] ? SplitTag::FinetuneTrain : SplitTag::FinetuneTest;
        (in_train[i] ? train : test).push_back(std::move(r));
    }
    return {Manifest::from_records(std::move(train)), Manifest::from_records(std::move(test))};
}

GlyphImage load_glyph_image(const std::filesystem::path& image_path, const ManifestRecord& rec,
                            int expected_resolution) {
    const Image img = read_png_gray(image_path);
    if (img.width != expected_resolution || img.height != expected_resolution)
        throw ShapeError(image_path.string() + ": expected " +
                         std::to_string(expected_resolution) + "x" +
                         std::to_string(expected_resolution) + ", got " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
    GlyphImage g;
    g.pixels = to_signed_range(img);
    g.resolution = expected_resolution;
    g.label = rec.label;
    g.style = rec.style;
    g.source = Source::Scanned;
    g.validate();
    return g;
}

Manifest render_corpus(const std::vector<char32_t>& labels, const FontRef& font, int resolution,
                       Style style, SplitTag split, const std::filesystem::path& out_dir,
                       bool append_manifest) {
    if (font.holdout_flag && split != SplitTag::FinetuneTest)
        throw ValueError("holdout font must not be used as a training-image source");
    const VectorFont vf = VectorFont::load(font.font_file_path);
    if (vf.holdout && split != SplitTag::FinetuneTest)
        throw ValueError("font '" + vf.name + "' is marked holdout; it must not produce training images");

    std::filesystem::create_directories(out_dir);
    std::vector<ManifestRecord> records;
    for (char32_t label : labels) {
        const GlyphImage g = render_glyph(label, vf, resolution, style);
        char name[64];
        std::snprintf(name, sizeof(name), "%s_u%04x.png", vf.name.c_str(),
                      static_cast<unsigned>(label));
        write_png_gray(out_dir / name, from_signed_range(g.pixels, resolution, resolution));
        records.push_back({name, label, style, split});
    }

    const auto manifest_path = out_dir / "manifest.tsv";
    if (append_manifest && std::filesystem::exists(manifest_path)) {
        Manifest existing = Manifest::load(manifest_path);
        for (auto& r : records) existing.records.push_back(std::move(r));
        Manifest merged = Manifest::from_records(std::move(existing.records));
        merged.save(manifest_path);
        return merged;
    }
    Manifest m = Manifest::from_records(std::move(records));
    m.save(manifest_path);
    return m;
}

}  // namespace calli
