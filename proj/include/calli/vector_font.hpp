#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "calli/image.hpp"
#include "calli/stroke_codec.hpp"

namespace calli {

// Stroke-outline font: every glyph is a list of brush polylines on a square
// design grid (y grows downward). Styling (stroke width, taper, slant,
// wobble) is a font-level property so the same glyph geometry can be reused
// across stylistic variants of a face.
struct FontStroke {
    int cls = 1;                                // stroke class 1..5, informational
    std::vector<std::array<double, 2>> points;  // polyline in font units
    double width = 1.0;                         // multiplier on FontStyle::width
};

struct FontGlyph {
    std::vector<FontStroke> strokes;
};

struct FontStyle {
    double width = 14.0;  // brush width in font units
    double taper = 0.0;   // 0 = uniform width, towards 1 = strongly tapered ends
    double slant = 0.0;   // horizontal shear, units of x per unit of y
    double wobble = 0.0;  // perpendicular waviness amplitude in font units
};

class VectorFont {
public:
    std::string name;
    double units = 256.0;
    bool holdout = false;
    FontStyle style;
    std::map<char32_t, FontGlyph> glyphs;

    static VectorFont load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string to_json() const;
    static VectorFont from_json(const std::string& text, const std::string& origin = "<memory>");

    bool has_glyph(char32_t c) const { return glyphs.count(c) != 0; }
};

// Rasterizes one glyph onto a resolution x resolution canvas: ink is bright
// (coverage 1), background dark (0). The glyph bounding box is centered with
// a 10% margin. Pure function of its inputs.
Image rasterize_glyph(const VectorFont& font, char32_t label, int resolution);

// Parameters for the bundled synthetic faces. Glyph geometry comes from
// hand-drawn layouts for common characters and otherwise from a
// deterministic arrangement of the character's stroke sequence, so any
// dictionary entry is coverable.
struct SynthFontSpec {
    std::string name = "synth";
    FontStyle style;
    bool holdout = false;
    std::uint64_t layout_seed = 7;  // perturbs procedural layouts only
};

VectorFont synthesize_font(const StrokeDictionary& dict, const SynthFontSpec& spec);

}  // namespace calli
